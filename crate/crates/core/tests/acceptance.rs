//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stderr so the summary shows even with output capture on.

use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use baet::autodiff::{grad_check, Graph, Tensor, Var};
use baet::eval::{ablation_matrix, compute_metrics, export_attention, generate_synthetic, Metrics, SyntheticSpec};
use baet::features::{build_vocab, prepare_event, FeatureCaps, PreparedEvent, Vocab, PAD};
use baet::ingest::{parse_line, prune_events, to_json_line, AdhocEventTree, EventNode, Label, RawAuthorProfile, Topology};
use baet::model::{
    embed_post, event_loss, forward_tree, l2_penalty, node_pool, ral_node, trvnn_forward, AblationConfig, Hyperparams,
    ModelError, ModelParams, RootContext, TreeParamIds,
};
use baet::train::{cross_validate, train_model, TrainConfig, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Timed checks run one at a time so their budgets are not shared.
static EXCLUSIVE: Mutex<()> = Mutex::new(());

fn exclusive() -> std::sync::MutexGuard<'static, ()> {
    EXCLUSIVE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} ({detail})");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn no_rng() -> Option<&'static mut ChaCha8Rng> {
    None
}

fn corpus_vocab(events: &[AdhocEventTree]) -> Vocab {
    build_vocab(events.iter().flat_map(|e| e.nodes().iter().map(|n| n.text.as_str())), 1).unwrap()
}

fn prepare_all(events: &[AdhocEventTree], vocab: &Vocab, max_len: usize) -> Vec<PreparedEvent> {
    events.iter().map(|e| prepare_event(e, vocab, max_len, FeatureCaps::default()).unwrap()).collect()
}

/// The 200-event corpus shared by the learning checks.
fn synthetic_200() -> &'static Vec<AdhocEventTree> {
    static CORPUS: OnceLock<Vec<AdhocEventTree>> = OnceLock::new();
    CORPUS.get_or_init(|| generate_synthetic(&SyntheticSpec { events: 200, marker_prob: 0.9, ..SyntheticSpec::default() }).unwrap())
}

fn small_config() -> TrainConfig {
    TrainConfig::new(Hyperparams { d: 16, epochs: 30, folds: 5, ..Hyperparams::default() })
}

#[test]
fn criterion_01_gradient_check() {
    let _lock = exclusive();
    let start = Instant::now();
    let (d, max_len, eps) = (8, 6, 1e-4);
    let mut worst = 0.0f64;
    for seed in 1..=3 {
        let spec = SyntheticSpec { events: 1, min_replies: 4, max_replies: 4, seed, ..SyntheticSpec::default() };
        let tree = generate_synthetic(&spec).unwrap().remove(0);
        assert_eq!(tree.len(), 5);
        let vocab = corpus_vocab(std::slice::from_ref(&tree));
        let event = prepare_event(&tree, &vocab, max_len, FeatureCaps::default()).unwrap();
        let hp = Hyperparams { d, max_len, dropout: 0.0, ..Hyperparams::default() };
        let params = ModelParams::new(vocab.len(), d, &mut rng(seed));
        let ablation = AblationConfig::full();
        let r = grad_check::<_, ModelError>(&params.store, eps, |g| {
            let (_, ce) = event_loss(g, &params, &event, &hp, &ablation, no_rng())?;
            match l2_penalty(g, &params, hp.l2)? {
                Some(pen) => Ok(g.add(ce, pen)?),
                None => Ok(ce),
            }
        })
        .unwrap();
        assert!(r.coordinates > 0);
        worst = worst.max(r.max_rel_error);
    }
    let elapsed = start.elapsed();
    report(1, worst < 1e-4 && elapsed < Duration::from_secs(60), &format!("max relative error {worst:.2e}, {elapsed:.1?}"));
}

/// Plain GRU over a sequence, written on vectors.
fn gru_oracle(store: &baet::autodiff::ParamStore, tp: &TreeParamIds, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (wu, bu, wr, wz, wh) = (store.get(tp.w_u), store.get(tp.b_u), store.get(tp.w_r), store.get(tp.w_z), store.get(tp.w_h));
    let times = |x: &[f64], w: &Tensor| -> Vec<f64> {
        (0..w.cols()).map(|c| (0..x.len()).map(|k| x[k] * w.get(k, c)).sum()).collect()
    };
    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let d = wu.cols();
    let mut h = vec![0.0; d];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let u: Vec<f64> = times(x, wu).iter().zip(bu.data()).map(|(a, b)| a + b).collect();
        let uh: Vec<f64> = u.iter().chain(&h).copied().collect();
        let r: Vec<f64> = times(&uh, wr).into_iter().map(sigmoid).collect();
        let z: Vec<f64> = times(&uh, wz).into_iter().map(sigmoid).collect();
        let ur: Vec<f64> = u.iter().copied().chain(h.iter().zip(&r).map(|(a, b)| a * b)).collect();
        let cand: Vec<f64> = times(&ur, wh).into_iter().map(f64::tanh).collect();
        h = (0..d).map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k]).collect();
        out.push(h.clone());
    }
    out
}

#[test]
fn criterion_02_chain_matches_sequential_gru() {
    let _lock = exclusive();
    let start = Instant::now();
    let d = 16;
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for t in 0..50 {
        let params = ModelParams::new(10, d, &mut r);
        let tp = if t % 2 == 0 { params.post } else { params.author };
        let len = r.gen_range(1..=20);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
        let mut g = Graph::new(&params.store);
        let inputs: Vec<Var> = xs.iter().map(|x| g.constant(Tensor::row_vector(x))).collect();
        let hs = trvnn_forward(&mut g, &tp, Topology::chain(len).parents(), &inputs).unwrap();
        let oracle = gru_oracle(&params.store, &tp, &xs);
        assert_eq!(hs.len(), oracle.len());
        for (h, o) in hs.iter().zip(&oracle) {
            worst = worst.max(g.value(*h).max_abs_diff(&Tensor::row_vector(o)));
        }
    }
    let elapsed = start.elapsed();
    report(2, worst < 1e-6 && elapsed < Duration::from_secs(10), &format!("max deviation {worst:.2e} over 50 chains, {elapsed:.1?}"));
}

#[test]
fn criterion_03_normalized_probabilities() {
    let _lock = exclusive();
    let events = &synthetic_200()[..100];
    let vocab = corpus_vocab(events);
    let d = 16;
    let mut passes = 0;
    let mut worst = 0.0f64;
    let mut negative = 0usize;
    for round in 0..10u64 {
        let hp = Hyperparams { d, mu: 0.2 * (round % 6) as f64, dropout: 0.0, ..Hyperparams::default() };
        let params = ModelParams::new(vocab.len(), d, &mut rng(100 + round));
        let prepared = prepare_all(events, &vocab, hp.max_len);
        for ev in &prepared {
            let mut g = Graph::new(&params.store);
            let out = forward_tree(&mut g, &params, ev, &hp, &AblationConfig::full(), no_rng()).unwrap();
            passes += 1;
            let p = out.probabilities(&g);
            worst = worst.max((p[0] + p[1] - 1.0).abs());
            for trace in [out.post.as_ref().unwrap(), out.author.as_ref().unwrap()] {
                for att in &trace.attention {
                    let probs = g.attention_probs(*att).expect("attention output");
                    for row in 0..probs.rows() {
                        worst = worst.max((probs.row(row).iter().sum::<f64>() - 1.0).abs());
                        negative += probs.row(row).iter().filter(|&&x| x < 0.0).count();
                    }
                }
                let alpha = g.value(trace.alpha.unwrap());
                worst = worst.max((alpha.sum() - 1.0).abs());
            }
        }
        let model = TrainedModel { params, vocab: vocab.clone(), config: TrainConfig::new(hp), trace: Vec::new() };
        for e in events.iter().take(10) {
            for rec in export_attention(e, &model).unwrap() {
                negative += rec.nodes.iter().filter(|n| !(n.alpha >= 0.0)).count();
                worst = worst.max((rec.nodes.iter().map(|n| n.alpha).sum::<f64>() - 1.0).abs());
            }
        }
    }
    report(
        3,
        passes >= 1000 && worst <= 1e-6 && negative == 0,
        &format!("{passes} passes, max |row sum - 1| {worst:.2e}, {negative} negative weights"),
    );
}

/// Self-attention and pooling of every post, kept at full padded length.
fn pooled_posts(params: &ModelParams, ev: &PreparedEvent, mu: f64) -> Vec<Vec<f64>> {
    let tp = &params.post;
    let mut g = Graph::new(&params.store);
    let len = ev.posts[0].max_len();
    let mats: Vec<Var> = ev.posts.iter().map(|p| embed_post(&mut g, params, p, len).unwrap()).collect();
    let masks: Vec<Vec<bool>> = ev.posts.iter().map(|p| p.ids.iter().map(|&id| id != PAD).collect()).collect();
    let root = RootContext::new(&mut g, tp, mats[0], Some(&masks[0])).unwrap();
    let mut out = Vec::new();
    for (i, m) in mats.iter().enumerate() {
        let (u, _) = ral_node(&mut g, tp, &root, *m, Some(&masks[i]), i == 0, mu).unwrap();
        let rows = ev.posts[i].real_positions();
        if rows.is_empty() {
            continue;
        }
        let p = node_pool(&mut g, u, &rows).unwrap();
        out.push(g.value(p).data().to_vec());
    }
    out
}

#[test]
fn criterion_04_padding_invariance() {
    let _lock = exclusive();
    let events = &synthetic_200()[100..];
    let vocab = corpus_vocab(events);
    let d = 16;
    let hp = Hyperparams { d, dropout: 0.0, ..Hyperparams::default() };
    let params = ModelParams::new(vocab.len(), d, &mut rng(4));
    let short = prepare_all(events, &vocab, 16);
    let mut worst = 0.0f64;
    let mut r = rng(44);
    for ev in &short {
        let extra = r.gen_range(1..=40);
        let mut long = ev.clone();
        for p in long.posts.iter_mut() {
            *p = p.with_len(16 + extra);
        }
        let predict = |e: &PreparedEvent| {
            let mut g = Graph::new(&params.store);
            let out = forward_tree(&mut g, &params, e, &hp, &AblationConfig::full(), no_rng()).unwrap();
            out.probabilities(&g)
        };
        let (a, b) = (predict(ev), predict(&long));
        worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        for (x, y) in pooled_posts(&params, ev, hp.mu).iter().zip(pooled_posts(&params, &long, hp.mu)) {
            for (p, q) in x.iter().zip(&y) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    report(4, worst < 1e-6, &format!("max change {worst:.2e} over {} events", short.len()));
}

#[test]
fn criterion_05_overfits_eight_events() {
    let _lock = exclusive();
    let start = Instant::now();
    let events = generate_synthetic(&SyntheticSpec { events: 8, seed: 5, ..SyntheticSpec::default() }).unwrap();
    let cfg = TrainConfig::new(Hyperparams { d: 16, epochs: 200, ..Hyperparams::default() });
    let model = train_model(&events, &cfg).unwrap();
    let m = model.evaluate(&events).unwrap();
    let elapsed = start.elapsed();
    report(
        5,
        m.accuracy == 1.0 && elapsed < Duration::from_secs(120),
        &format!("train accuracy {:.3} after {} epochs, {elapsed:.1?}", m.accuracy, cfg.hyper.epochs),
    );
}

#[test]
fn criterion_06_synthetic_cross_validation() {
    let _lock = exclusive();
    let start = Instant::now();
    let report_cv = cross_validate(synthetic_200(), &small_config()).unwrap();
    let elapsed = start.elapsed();
    let per_fold: Vec<String> = report_cv.results.iter().map(|r| format!("{:.3}", r.metrics.accuracy)).collect();
    report(
        6,
        report_cv.mean.accuracy >= 0.90 && elapsed < Duration::from_secs(300),
        &format!("mean accuracy {:.4}, folds [{}], {elapsed:.1?}", report_cv.mean.accuracy, per_fold.join(", ")),
    );
}

#[test]
fn criterion_07_ablation_matrix() {
    let _lock = exclusive();
    let rows = ablation_matrix(synthetic_200(), &small_config()).unwrap();
    let full = rows[0].mean.accuracy;
    let complete = rows.len() == 15
        && rows.iter().all(|r| r.folds.len() == 5 && r.mean.accuracy.is_finite() && r.fold_hash == rows[0].fold_hash);
    let weakest = rows[1..].iter().map(|r| (r.mean.accuracy, r.name.as_str())).fold((f64::MIN, ""), |a, b| if b.0 > a.0 { b } else { a });
    for r in &rows {
        let _ = writeln!(std::io::stderr(), "    {:<24} {:.4}", r.name, r.mean.accuracy);
    }
    report(
        7,
        complete && rows[1..].iter().all(|r| full >= r.mean.accuracy - 0.02),
        &format!("{} rows, full model {full:.4}, best variant {} {:.4}", rows.len(), weakest.1, weakest.0),
    );
}

fn write_corpus(path: &Path, events: &[AdhocEventTree]) {
    let f = std::fs::File::create(path).unwrap();
    baet::ingest::write_events(events, std::io::BufWriter::new(f)).unwrap();
}

#[test]
fn criterion_08_mu_zero_and_sweep() {
    let _lock = exclusive();
    let events = &synthetic_200()[..60];
    let vocab = corpus_vocab(events);
    let d = 16;
    let hp = Hyperparams { d, mu: 0.0, dropout: 0.0, ..Hyperparams::default() };
    let params = ModelParams::new(vocab.len(), d, &mut rng(8));
    let mut identical = 0;
    let prepared = prepare_all(events, &vocab, hp.max_len);
    for ev in &prepared {
        // the gated path at μ = 0 against attention output pooled directly
        let mut g = Graph::new(&params.store);
        let out = forward_tree(&mut g, &params, ev, &hp, &AblationConfig::full(), no_rng()).unwrap();
        let trace = out.post.unwrap();
        let mut same = true;
        for (i, att) in trace.attention.iter().enumerate() {
            let rows = ev.posts[i].real_positions();
            if rows.is_empty() {
                continue;
            }
            let direct = node_pool(&mut g, *att, &rows).unwrap();
            same &= g.value(direct) == g.value(trace.pooled[i]);
        }
        // gate weights must not matter at all
        let mut other = params.clone();
        for tp in [other.post, other.author] {
            let (r, c) = other.store.get(tp.w_a).shape();
            other.set(tp.w_a, Tensor::filled(r, c, 3.0));
            other.set(tp.b_a, Tensor::filled(1, c, -1.0));
        }
        let mut g2 = Graph::new(&other.store);
        let out2 = forward_tree(&mut g2, &other, ev, &hp, &AblationConfig::full(), no_rng()).unwrap();
        same &= g.value(out.probs) == g2.value(out2.probs);
        identical += same as usize;
    }

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("events.jsonl");
    write_corpus(&input, &synthetic_200()[..24]);
    let out = dir.path().join("sweep");
    let code = baet::cli::run([
        "baet", "-o", out.to_str().unwrap(), "sweep", "--param", "mu", "--input", input.to_str().unwrap(),
        "--d", "8", "--epochs", "1", "--folds", "2", "--max-len", "12",
    ]);
    let mut mus = Vec::new();
    if code == 0 {
        let mut rd = csv::Reader::from_path(out.join("sweep_mu.csv")).unwrap();
        let col = rd.headers().unwrap().iter().position(|h| h == "mu").unwrap();
        for rec in rd.records() {
            mus.push(rec.unwrap()[col].parse::<f64>().unwrap());
        }
    }
    let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let table_ok = mus.len() == 6 && mus.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12);
    report(
        8,
        identical == prepared.len() && table_ok,
        &format!("{identical}/{} events identical at mu=0, sweep exit {code} with mu {mus:?}", prepared.len()),
    );
}

/// Confusion counts by enumerating every (prediction, truth) pair.
fn confusion_oracle(preds: &[Label], truth: &[Label]) -> [usize; 4] {
    let mut c = [0; 4];
    for (p, t) in preds.iter().zip(truth) {
        let slot = match (p, t) {
            (Label::Rumor, Label::Rumor) => 0,
            (Label::Rumor, Label::NonRumor) => 1,
            (Label::NonRumor, Label::Rumor) => 2,
            (Label::NonRumor, Label::NonRumor) => 3,
        };
        c[slot] += 1;
    }
    c
}

#[test]
fn criterion_09_metrics_oracle() {
    let mut r = rng(9);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.gen_range(1..=40);
        let probs: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let p = if r.gen_bool(0.1) { 0.5 } else { r.gen::<f64>() };
                [p, 1.0 - p]
            })
            .collect();
        let labels: Vec<Label> = (0..n).map(|_| if r.gen() { Label::Rumor } else { Label::NonRumor }).collect();
        let preds: Vec<Label> = probs.iter().map(|p| if p[0] >= p[1] { Label::Rumor } else { Label::NonRumor }).collect();
        let [tp, fp, fn_, tn] = confusion_oracle(&preds, &labels);
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let expect = Metrics { accuracy: ratio(tp + tn, n), precision, recall, f1, tp, fp, fn_, tn };
        if compute_metrics(&probs, &labels).unwrap() != expect {
            mismatches += 1;
        }
    }
    report(9, mismatches == 0, &format!("{mismatches} mismatches in 1000 cases"));
}

fn read_trace(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn criterion_10_reproducible_training() {
    let _lock = exclusive();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("events.jsonl");
    write_corpus(&input, &synthetic_200()[..40]);
    let train = |name: &str| {
        let out = dir.path().join(name);
        let code = baet::cli::run([
            "baet", "-o", out.to_str().unwrap(), "train", "--input", input.to_str().unwrap(),
            "--d", "8", "--epochs", "2", "--folds", "3", "--max-len", "12", "--seed", "13",
        ]);
        assert_eq!(code, 0);
        out
    };
    let (a, b) = (train("a"), train("b"));
    let folds_same = std::fs::read(a.join("folds.json")).unwrap() == std::fs::read(b.join("folds.json")).unwrap();
    let mut epoch0_same = true;
    let mut losses = Vec::new();
    for name in ["trace_fold0.jsonl", "trace_fold1.jsonl", "trace_fold2.jsonl", "trace_final.jsonl"] {
        let (ta, tb) = (read_trace(&a.join(name)), read_trace(&b.join(name)));
        let first = |t: &[serde_json::Value]| t.iter().find(|r| r["epoch"] == 0).map(|r| r["loss"].as_f64().unwrap());
        let (la, lb) = (first(&ta), first(&tb));
        epoch0_same &= la.is_some() && la.map(f64::to_bits) == lb.map(f64::to_bits);
        losses.extend(la);
    }
    report(
        10,
        folds_same && epoch0_same,
        &format!("folds identical: {folds_same}, epoch-0 losses identical: {epoch0_same} {losses:.6?}"),
    );
}

fn random_text(r: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 10] = ["rumor", "Breaking", "\"quoted\"", "naïve", "?", "#tag", "@user", "http://x.y/z", "\\n", "éclair"];
    (0..r.gen_range(0..8)).map(|_| PIECES[r.gen_range(0..PIECES.len())]).collect::<Vec<_>>().join(" ")
}

fn random_profile(r: &mut ChaCha8Rng, id: Option<String>) -> RawAuthorProfile {
    RawAuthorProfile {
        id,
        followers: r.gen_range(0..1_000_000),
        friends: r.gen_range(0..10_000),
        favorites: r.gen_range(0..100_000),
        reposts: r.gen_range(0..50_000),
        statuses: r.gen_range(0..500_000),
        verified: r.gen(),
        geo_enabled: r.gen(),
        time_zone_enabled: r.gen(),
        account_created: 1_200_000_000 + r.gen_range(0..200_000_000),
    }
}

/// A random valid event and whether the pruning rule should keep it.
fn random_event(r: &mut ChaCha8Rng, k: usize) -> (AdhocEventTree, bool) {
    let n = r.gen_range(1..=9);
    let drop_profile = r.gen_bool(0.2);
    let missing = if drop_profile { Some(r.gen_range(0..n)) } else { None };
    let base = 1_420_000_000 + r.gen_range(0..1_000_000);
    let mut nodes: Vec<EventNode> = Vec::with_capacity(n);
    for i in 0..n {
        let parent = (i > 0).then(|| r.gen_range(0..i));
        let timestamp = match parent {
            None => base,
            Some(p) => nodes[p].timestamp + r.gen_range(0..5000),
        };
        let id = r.gen_bool(0.5).then(|| format!("user{}", r.gen_range(0..20)));
        nodes.push(EventNode {
            node_id: format!("e{k}-n{i}"),
            parent_id: parent.map(|p| format!("e{k}-n{p}")),
            text: random_text(r),
            timestamp,
            author: (missing != Some(i)).then(|| random_profile(r, id)),
        });
    }
    nodes.reverse();
    let label = if r.gen() { Label::Rumor } else { Label::NonRumor };
    let tree = AdhocEventTree::new(format!("event-{k}"), label, nodes).unwrap();
    (tree, n - 1 >= 3 && missing.is_none())
}

#[test]
fn criterion_11_round_trip_and_pruning() {
    let mut r = rng(11);
    let mut trees = Vec::new();
    let mut keep = Vec::new();
    let mut round_trips = 0;
    for k in 0..100 {
        let (tree, kept) = random_event(&mut r, k);
        let line = to_json_line(&tree);
        let back = parse_line(&line).unwrap();
        if back == tree && to_json_line(&back) == line {
            round_trips += 1;
        }
        trees.push(tree);
        keep.push(kept);
    }
    let expected: Vec<String> = trees.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| t.event_id.clone()).collect();
    let pruned: Vec<String> = prune_events(trees).into_iter().map(|t| t.event_id).collect();
    report(
        11,
        round_trips == 100 && pruned == expected,
        &format!("{round_trips}/100 round trips, pruning kept {} of 100 (expected {})", pruned.len(), expected.len()),
    );
}

/// Runs only when `BAET_PHEME_EVENTS` names a canonical JSONL corpus.
#[test]
fn criterion_12_pheme_optional() {
    let Ok(path) = std::env::var("BAET_PHEME_EVENTS") else {
        let _ = writeln!(std::io::stderr(), "criterion 12: SKIP (BAET_PHEME_EVENTS not set)");
        return;
    };
    let _lock = exclusive();
    let f = std::fs::File::open(&path).unwrap();
    let events = prune_events(baet::ingest::read_events(std::io::BufReader::new(f)).unwrap());
    let cv = cross_validate(&events, &TrainConfig::default()).unwrap();
    let _ = writeln!(
        std::io::stderr(),
        "criterion 12: INFO ({} events, accuracy {:.4}, F1 {:.4})",
        events.len(),
        cv.mean.accuracy,
        cv.mean.f1
    );
}
