//! Optimization and experiment orchestration: Adam, mini-batch training,
//! stratified k-fold cross-validation and grid search.
//!
//! Every random draw derives from `Hyperparams::seed`, and per-event gradients
//! are summed in batch order, so a run is bitwise reproducible regardless of
//! the worker count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{read_checkpoint, write_checkpoint, AutodiffError, CheckpointError, Graph, ParamStore, Tensor, PROB_CLAMP};
use crate::eval::{compute_metrics, MeanMetrics, Metrics, MetricsError};
use crate::features::{build_vocab, prepare_event, FeatureCaps, FeatureError, PreparedEvent, Vocab};
use crate::ingest::{AdhocEventTree, Label};
use crate::model::{event_loss, forward_tree, l2_penalty, AblationConfig, Hyperparams, ModelError, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Share of the training set held out for early stopping.
const VALIDATION_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("model metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite gradient for {param}")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("gradient for {param} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch { param: String, got: (usize, usize), expected: (usize, usize) },
    #[error("{samples} samples cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("grid has no points")]
    EmptyGrid,
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    pub ablation: AblationConfig,
    pub caps: FeatureCaps,
}

impl TrainConfig {
    pub fn new(hyper: Hyperparams) -> Self {
        TrainConfig { hyper, ..Default::default() }
    }
}

/// Adam moments for every parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        OptimizerState { m: store.zeros_like(), v: store.zeros_like(), step: 0, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// One bias-corrected Adam update. `grads` is indexed by parameter id.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<(), TrainError> {
    for (id, name, value) in store.iter() {
        let g = &grads[id.index()];
        if g.shape() != value.shape() {
            return Err(TrainError::ShapeMismatch { param: name.to_string(), got: g.shape(), expected: value.shape() });
        }
        if !g.all_finite() {
            return Err(TrainError::NonFiniteGradient { param: name.to_string() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let p = store.get_mut(id).data_mut();
        for (k, &g) in grads[i].data().iter().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + state.eps);
        }
    }
    Ok(())
}

/// One train/test partition, as indices into the event list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified folds: each class is shuffled and dealt round-robin, the deal
/// continuing where the previous class stopped so fold sizes differ by at most one.
pub fn kfold_split(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>, TrainError> {
    if k < 2 || labels.len() < k {
        return Err(TrainError::TooFewSamples { samples: labels.len(), folds: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = vec![Vec::new(); k];
    let mut next = 0;
    for class in [Label::Rumor, Label::NonRumor] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            members[next].push(i);
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut test = members[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = members.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, m)| m.iter().copied()).collect();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect())
}

/// Hex SHA-256 of a fold partition.
pub fn fold_hash(folds: &[Fold]) -> String {
    let mut h = Sha256::new();
    for f in folds {
        for part in [&f.train, &f.test] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part {
                h.update((i as u64).to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One line of a loss trace; `loss` is a mean cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derived seed for a sub-stream.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b)
}

/// Class probabilities for each event with dropout off.
pub fn predict_prepared(
    params: &ModelParams,
    events: &[PreparedEvent],
    hyper: &Hyperparams,
    ablation: &AblationConfig,
) -> Result<Vec<[f64; 2]>, TrainError> {
    events
        .par_iter()
        .map(|ev| {
            let mut g = Graph::new(&params.store);
            let out = forward_tree(&mut g, params, ev, hyper, ablation, None::<&mut ChaCha8Rng>)?;
            Ok(out.probabilities(&g))
        })
        .collect()
}

/// Mean clamped cross-entropy and accuracy of `probs` against the events' labels.
pub fn score(probs: &[[f64; 2]], events: &[PreparedEvent]) -> (f64, f64) {
    if events.is_empty() {
        return (0.0, 0.0);
    }
    let n = events.len() as f64;
    let loss = probs.iter().zip(events).map(|(p, e)| -p[e.label.index()].max(PROB_CLAMP).ln()).sum::<f64>() / n;
    let hits = probs.iter().zip(events).filter(|(p, e)| crate::eval::argmax_label(**p) == e.label).count();
    (loss, hits as f64 / n)
}

/// A trained network with everything needed to score raw events.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub config: TrainConfig,
    pub trace: Vec<EpochRecord>,
}

/// Contents of the model description written next to a checkpoint.
#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: TrainConfig,
    vocab_size: usize,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const META_FILE: &str = "model.json";

impl TrainedModel {
    pub fn prepare(&self, tree: &AdhocEventTree) -> Result<PreparedEvent, TrainError> {
        Ok(prepare_event(tree, &self.vocab, self.config.hyper.max_len, self.config.caps)?)
    }

    pub fn prepare_all(&self, trees: &[AdhocEventTree]) -> Result<Vec<PreparedEvent>, TrainError> {
        trees.par_iter().map(|t| self.prepare(t)).collect()
    }

    pub fn predict(&self, trees: &[AdhocEventTree]) -> Result<Vec<[f64; 2]>, TrainError> {
        let prepared = self.prepare_all(trees)?;
        predict_prepared(&self.params, &prepared, &self.config.hyper, &self.config.ablation)
    }

    pub fn evaluate(&self, trees: &[AdhocEventTree]) -> Result<Metrics, TrainError> {
        let probs = self.predict(trees)?;
        let labels: Vec<Label> = trees.iter().map(|t| t.label).collect();
        Ok(compute_metrics(&probs, &labels)?)
    }

    /// Writes the checkpoint, vocabulary and model description into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
        write_checkpoint(&self.params.store, &mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(VOCAB_FILE))?);
        self.vocab.write(&mut w)?;
        w.flush()?;
        let meta = ModelMeta { config: self.config.clone(), vocab_size: self.vocab.len() };
        std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Loads a model written by [`TrainedModel::save`]. Weights are stored as
    /// f32, so a reloaded model matches the original to single precision.
    pub fn load(dir: &Path) -> Result<TrainedModel, TrainError> {
        let meta: ModelMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        let vocab = Vocab::read(BufReader::new(File::open(dir.join(VOCAB_FILE))?))?;
        let mut params = ModelParams::new(vocab.len(), meta.config.hyper.d, &mut ChaCha8Rng::seed_from_u64(0));
        let entries = read_checkpoint(BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?))?;
        params.store.load_entries(entries)?;
        Ok(TrainedModel { params, vocab, config: meta.config, trace: Vec::new() })
    }
}

/// Gradient of one mini-batch: the mean cross-entropy gradient plus the L2
/// term. Also returns the summed cross-entropy and the number of correct
/// predictions, both in training mode.
fn batch_gradients(
    params: &ModelParams,
    events: &[PreparedEvent],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, usize, Vec<Tensor>), TrainError> {
    let hp = &cfg.hyper;
    let per_event = batch
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(hp.seed, epoch as u64, i as u64));
            let mut g = Graph::new(&params.store);
            let (out, l) = event_loss(&mut g, params, &events[i], hp, &cfg.ablation, Some(&mut rng))?;
            let hit = crate::eval::argmax_label(out.probabilities(&g)) == events[i].label;
            Ok((g.scalar(l), hit, g.backward(l)?))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut grads = params.store.zeros_like();
    let (mut total, mut hits) = (0.0, 0);
    for (l, hit, g) in &per_event {
        total += l;
        hits += usize::from(*hit);
        g.accumulate_into(&mut grads);
    }
    let scale = 1.0 / batch.len() as f64;
    for t in &mut grads {
        t.scale_assign(scale);
    }
    let mut g = Graph::new(&params.store);
    if let Some(pen) = l2_penalty(&mut g, params, hp.l2)? {
        g.backward(pen)?.accumulate_into(&mut grads);
    }
    Ok((total, hits, grads))
}

/// Trains on `train`. The vocabulary comes from the training texts only.
///
/// The trace has one train record per epoch. Epoch 0 scores the initial
/// parameters with dropout off; later epochs report the running loss and
/// accuracy of the training passes. With `patience` set, a validation record
/// (dropout off) follows each train record and the parameters of the best
/// validation epoch are returned.
pub fn train_model(train: &[AdhocEventTree], cfg: &TrainConfig) -> Result<TrainedModel, TrainError> {
    let hp = &cfg.hyper;
    hp.validate()?;
    cfg.ablation.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }

    let all: Vec<usize> = (0..train.len()).collect();
    let (fit_idx, val_idx) = match hp.patience {
        Some(_) if train.len() >= VALIDATION_FOLDS => {
            let labels: Vec<Label> = train.iter().map(|t| t.label).collect();
            let folds = kfold_split(&labels, VALIDATION_FOLDS, mix(hp.seed, u64::MAX, 0))?;
            (folds[0].train.clone(), folds[0].test.clone())
        }
        _ => (all, Vec::new()),
    };

    let vocab = build_vocab(fit_idx.iter().flat_map(|&i| train[i].nodes().iter().map(|n| n.text.as_str())), hp.min_count)?;
    let prepare = |idx: &[usize]| -> Result<Vec<PreparedEvent>, TrainError> {
        idx.par_iter().map(|&i| Ok(prepare_event(&train[i], &vocab, hp.max_len, cfg.caps)?)).collect()
    };
    let fit = prepare(&fit_idx)?;
    let val = prepare(&val_idx)?;

    let mut params = ModelParams::new(vocab.len(), hp.d, &mut ChaCha8Rng::seed_from_u64(hp.seed));
    let mut state = OptimizerState::new(&params.store);
    let mut trace = Vec::new();

    let validate = |params: &ModelParams, epoch: usize, trace: &mut Vec<EpochRecord>| -> Result<Option<f64>, TrainError> {
        if val.is_empty() {
            return Ok(None);
        }
        let (loss, accuracy) = score(&predict_prepared(params, &val, hp, &cfg.ablation)?, &val);
        trace.push(EpochRecord { epoch, split: Split::Validation, loss, accuracy });
        Ok(Some(loss))
    };

    let (loss, accuracy) = score(&predict_prepared(&params, &fit, hp, &cfg.ablation)?, &fit);
    trace.push(EpochRecord { epoch: 0, split: Split::Train, loss, accuracy });
    let mut best = validate(&params, 0, &mut trace)?.map(|l| (l, params.clone()));
    let mut since_best = 0;
    for epoch in 1..=hp.epochs {
        let mut order: Vec<usize> = (0..fit.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(hp.seed, epoch as u64, u64::MAX)));
        let (mut total, mut hits) = (0.0, 0);
        for (b, batch) in order.chunks(hp.batch_size).enumerate() {
            let (loss, hit, grads) = batch_gradients(&params, &fit, batch, cfg, epoch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, loss: loss / batch.len() as f64 });
            }
            adam_step(&mut params.store, &grads, &mut state, hp.lr)?;
            total += loss;
            hits += hit;
        }
        let n = fit.len() as f64;
        trace.push(EpochRecord { epoch, split: Split::Train, loss: total / n, accuracy: hits as f64 / n });
        debug!("epoch {epoch}: train loss {:.5} accuracy {:.4}", total / n, hits as f64 / n);
        if let Some(val_loss) = validate(&params, epoch, &mut trace)? {
            match &best {
                Some((l, _)) if *l <= val_loss => since_best += 1,
                _ => {
                    best = Some((val_loss, params.clone()));
                    since_best = 0;
                }
            }
            if hp.patience.is_some_and(|p| since_best >= p) {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainedModel { params, vocab, config: cfg.clone(), trace })
}

/// Outcome of one cross-validation fold.
#[derive(Clone, Debug)]
pub struct FoldReport {
    pub fold: usize,
    pub metrics: Metrics,
    pub trace: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<Fold>,
    pub fold_hash: String,
    pub results: Vec<FoldReport>,
    pub mean: MeanMetrics,
}

/// Trains and tests once per fold of `folds`. Folds run in parallel.
pub fn cross_validate_with(events: &[AdhocEventTree], cfg: &TrainConfig, folds: &[Fold]) -> Result<CvReport, TrainError> {
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let train: Vec<AdhocEventTree> = fold.train.iter().map(|&i| events[i].clone()).collect();
            let test: Vec<AdhocEventTree> = fold.test.iter().map(|&i| events[i].clone()).collect();
            let model = train_model(&train, cfg)?;
            let metrics = model.evaluate(&test)?;
            debug!("fold {f}: accuracy {:.4}", metrics.accuracy);
            Ok(FoldReport { fold: f, metrics, trace: model.trace })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mean = Metrics::mean(&results.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(CvReport { folds: folds.to_vec(), fold_hash: fold_hash(folds), results, mean })
}

/// Stratified k-fold cross-validation with `cfg.hyper.folds` folds.
pub fn cross_validate(events: &[AdhocEventTree], cfg: &TrainConfig) -> Result<CvReport, TrainError> {
    let labels: Vec<Label> = events.iter().map(|e| e.label).collect();
    let folds = kfold_split(&labels, cfg.hyper.folds, cfg.hyper.seed)?;
    cross_validate_with(events, cfg, &folds)
}

/// Values to try for each searched hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: Vec<usize>,
    pub mu: Vec<f64>,
    pub lr: Vec<f64>,
    pub l2: Vec<f64>,
}

impl Grid {
    pub const D_VALUES: [usize; 5] = [16, 32, 64, 128, 256];
    pub const MU_VALUES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    pub const LR_VALUES: [f64; 5] = [1e-3, 5e-3, 1e-4, 5e-4, 1e-5];
    pub const L2_VALUES: [f64; 5] = [0.0, 1e-1, 1e-2, 1e-3, 1e-4];

    pub fn single(h: &Hyperparams) -> Grid {
        Grid { d: vec![h.d], mu: vec![h.mu], lr: vec![h.lr], l2: vec![h.l2] }
    }

    pub fn mu_sweep(h: &Hyperparams) -> Grid {
        Grid { mu: Self::MU_VALUES.to_vec(), ..Self::single(h) }
    }

    pub fn d_sweep(h: &Hyperparams) -> Grid {
        Grid { d: Self::D_VALUES.to_vec(), ..Self::single(h) }
    }

    /// Learning rate × L2 grid used for tuning.
    pub fn optimizer_sweep(h: &Hyperparams) -> Grid {
        Grid { lr: Self::LR_VALUES.to_vec(), l2: Self::L2_VALUES.to_vec(), ..Self::single(h) }
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty() || self.mu.is_empty() || self.lr.is_empty() || self.l2.is_empty()
    }

    /// Every combination, `base` supplying the remaining settings.
    pub fn points(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &mu in &self.mu {
                for &lr in &self.lr {
                    for &l2 in &self.l2 {
                        out.push(Hyperparams { d, mu, lr, l2, ..base.clone() });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridRow {
    pub hyper: Hyperparams,
    pub mean: MeanMetrics,
    pub fold_hash: String,
}

#[derive(Clone, Debug)]
pub struct GridReport {
    pub best: Hyperparams,
    pub rows: Vec<GridRow>,
}

/// Cross-validates every grid point on the same folds. The best point has the
/// highest mean accuracy, then the highest mean F1, then the smallest `d`.
pub fn grid_search(events: &[AdhocEventTree], grid: &Grid, base: &TrainConfig) -> Result<GridReport, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let labels: Vec<Label> = events.iter().map(|e| e.label).collect();
    let folds = kfold_split(&labels, base.hyper.folds, base.hyper.seed)?;
    let mut rows = Vec::new();
    for hyper in grid.points(&base.hyper) {
        let cfg = TrainConfig { hyper: hyper.clone(), ..base.clone() };
        let report = cross_validate_with(events, &cfg, &folds)?;
        info!("d={} mu={} lr={} l2={}: accuracy {:.4}", hyper.d, hyper.mu, hyper.lr, hyper.l2, report.mean.accuracy);
        rows.push(GridRow { hyper, mean: report.mean, fold_hash: report.fold_hash });
    }
    let best = rows
        .iter()
        .reduce(|a, b| {
            let better = b.mean.accuracy > a.mean.accuracy
                || (b.mean.accuracy == a.mean.accuracy
                    && (b.mean.f1 > a.mean.f1 || (b.mean.f1 == a.mean.f1 && b.hyper.d < a.hyper.d)));
            if better {
                b
            } else {
                a
            }
        })
        .expect("non-empty grid")
        .hyper
        .clone();
    Ok(GridReport { best, rows })
}

/// Results table: configuration columns then metric columns.
pub fn write_grid_table<W: Write>(rows: &[GridRow], w: W) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "d", "mu", "lr", "l2", "dropout", "batch_size", "epochs", "folds", "seed", "accuracy", "precision", "recall", "f1", "fold_hash",
    ])?;
    for r in rows {
        let h = &r.hyper;
        out.write_record([
            h.d.to_string(),
            h.mu.to_string(),
            h.lr.to_string(),
            h.l2.to_string(),
            h.dropout.to_string(),
            h.batch_size.to_string(),
            h.epochs.to_string(),
            h.folds.to_string(),
            h.seed.to_string(),
            format!("{:.6}", r.mean.accuracy),
            format!("{:.6}", r.mean.precision),
            format!("{:.6}", r.mean.recall),
            format!("{:.6}", r.mean.f1),
            r.fold_hash.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
