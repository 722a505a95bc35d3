use baet::autodiff::{grad_check, AutodiffError, Graph, ParamStore, Tensor};
use baet::eval::{bucket_accuracy, compute_metrics};
use baet::features::{AuthorFeatures, PreparedEvent, TokenizedPost, PAD};
use baet::ingest::{Label, Topology};
use baet::model::{forward_tree, AblationConfig, Hyperparams, ModelParams, Variant, TreeKind};
use baet::train::kfold_split;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels() -> impl Strategy<Value = Vec<Label>> {
    proptest::collection::vec(prop_oneof![Just(Label::Rumor), Just(Label::NonRumor)], 0..60)
}

fn parents(n: usize, seed: u64) -> Topology {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Topology::from_parents((0..n).map(|i| if i == 0 { None } else { Some(r.gen_range(0..i)) }).collect()).unwrap()
}

fn event(seed: u64, n: usize, vocab: usize, max_len: usize) -> PreparedEvent {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let posts = (0..n)
        .map(|_| {
            let real = r.gen_range(0..=max_len);
            let mut ids: Vec<usize> = (0..real).map(|_| r.gen_range(1..vocab)).collect();
            let freq: Vec<f64> = ids.iter().map(|i| ids.iter().filter(|j| *j == i).count() as f64).collect();
            let mut freq = freq;
            ids.resize(max_len, PAD);
            freq.resize(max_len, 0.0);
            TokenizedPost { ids, freq }
        })
        .collect();
    PreparedEvent {
        event_id: "p".into(),
        label: if r.gen() { Label::Rumor } else { Label::NonRumor },
        node_ids: (0..n).map(|i| i.to_string()).collect(),
        topology: parents(n, seed),
        posts,
        authors: (0..n).map(|_| AuthorFeatures { basic: std::array::from_fn(|_| r.gen()), habit: std::array::from_fn(|_| r.gen()) }).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn folds_partition_and_stratify(labels in labels(), k in 2usize..7, seed in any::<u64>()) {
        match kfold_split(&labels, k, seed) {
            Err(_) => prop_assert!(labels.len() < k),
            Ok(folds) => {
                prop_assert_eq!(folds.len(), k);
                let mut seen = vec![0; labels.len()];
                for f in &folds {
                    for &i in &f.test {
                        seen[i] += 1;
                    }
                    prop_assert_eq!(f.train.len() + f.test.len(), labels.len());
                    prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
                let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                let rumors: Vec<usize> = folds.iter().map(|f| f.test.iter().filter(|&&i| labels[i] == Label::Rumor).count()).collect();
                prop_assert!(rumors.iter().max().unwrap() - rumors.iter().min().unwrap() <= 1);
                prop_assert_eq!(kfold_split(&labels, k, seed).unwrap(), folds);
            }
        }
    }

    #[test]
    fn metrics_are_bounded_and_counted(cases in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..50)) {
        let probs: Vec<[f64; 2]> = cases.iter().map(|(p, _)| [*p, 1.0 - *p]).collect();
        let labels: Vec<Label> = cases.iter().map(|(_, r)| if *r { Label::Rumor } else { Label::NonRumor }).collect();
        let m = compute_metrics(&probs, &labels).unwrap();
        prop_assert_eq!(m.tp + m.fp + m.fn_ + m.tn, cases.len());
        for x in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }

    #[test]
    fn buckets_cover_every_sample(counts in proptest::collection::vec((0usize..300, any::<bool>()), 0..40)) {
        let b = bucket_accuracy(&counts, &[0, 10, 25, 50, 100, 150]).unwrap();
        prop_assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), counts.len());
    }

    #[test]
    fn outputs_are_distributions_for_every_variant(seed in any::<u64>(), n in 1usize..7, mu in 0.0f64..=1.0) {
        let ev = event(seed, n, 20, 6);
        let d = 6;
        let params = ModelParams::new(20, d, &mut ChaCha8Rng::seed_from_u64(seed));
        let hp = Hyperparams { d, mu, dropout: 0.0, ..Hyperparams::default() };
        let mut configs = vec![AblationConfig::full()];
        for side in [TreeKind::Post, TreeKind::Author] {
            configs.extend(Variant::ABLATIONS.iter().map(|v| v.config(side)));
        }
        for cfg in configs {
            let mut g = Graph::new(&params.store);
            let out = forward_tree(&mut g, &params, &ev, &hp, &cfg, None::<&mut ChaCha8Rng>).unwrap();
            let p = out.probabilities(&g);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            for t in [out.post.as_ref(), out.author.as_ref()].into_iter().flatten() {
                if let Some(a) = t.alpha {
                    let a = g.value(a);
                    prop_assert_eq!(a.len(), n);
                    prop_assert!(a.data().iter().all(|&x| x >= 0.0));
                    prop_assert!((a.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn prediction_ignores_sibling_storage_order(seed in any::<u64>()) {
        // a root with three leaf replies; swapping two leaves must not change ŷ
        let mut ev = event(seed, 4, 20, 5);
        ev.topology = Topology::star(4);
        let params = ModelParams::new(20, 5, &mut ChaCha8Rng::seed_from_u64(seed));
        let hp = Hyperparams { d: 5, dropout: 0.0, ..Hyperparams::default() };
        let run = |e: &PreparedEvent| {
            let mut g = Graph::new(&params.store);
            let out = forward_tree(&mut g, &params, e, &hp, &AblationConfig::full(), None::<&mut ChaCha8Rng>).unwrap();
            out.probabilities(&g)
        };
        let mut swapped = ev.clone();
        swapped.posts.swap(1, 3);
        swapped.authors.swap(1, 3);
        let (a, b) = (run(&ev), run(&swapped));
        prop_assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn primitives_match_finite_differences(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |r_: usize, c_: usize| Tensor::from_vec(r_, c_, (0..r_ * c_).map(|_| r.gen_range(-1.5..1.5)).collect()).unwrap();
        let mut store = ParamStore::new();
        let a = store.insert("a", rand(rows, cols), true);
        let b = store.insert("b", rand(cols, rows), true);
        let c = store.insert("c", rand(rows, cols), false);
        let report = grad_check::<_, AutodiffError>(&store, 1e-5, |g| {
            let (a, b, c) = (g.param(a), g.param(b), g.param(c));
            let ab = g.matmul(a, b)?;
            let s = g.row_softmax(ab);
            let t = g.tanh(c);
            let m = g.mul(a, t)?;
            let sig = g.sigmoid(m);
            let sb = g.matmul(s, sig)?;
            let sq = g.mul(sb, sb)?;
            let all: Vec<usize> = (0..rows).collect();
            let pooled = g.mean_rows(sq, &all)?;
            let w = g.constant(Tensor::filled(cols, 1, 1.0));
            g.matmul(pooled, w)
        }).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
    }
}
