//! Metrics, the ablation matrix, accuracy by thread size, attention export and
//! synthetic corpora.

mod metrics;
mod synthetic;

pub use metrics::{argmax_label, compute_metrics, MeanMetrics, Metrics, MetricsError, POSITIVE_CLASS_NOTE};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Graph;
use crate::ingest::{AdhocEventTree, IngestError, Label};
use crate::model::{forward_tree, AblationConfig, ModelError, TreeKind, Variant};
use crate::train::{cross_validate_with, kfold_split, TrainConfig, TrainError, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid bucket edges: {0}")]
    InvalidEdges(String),
}

/// One row of the ablation comparison.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub ablation: AblationConfig,
    pub mean: MeanMetrics,
    pub folds: Vec<Metrics>,
    pub fold_hash: String,
    pub seed: u64,
}

/// The full model followed by the seven post-side and seven author-side variants.
pub fn ablation_variants() -> Vec<(String, AblationConfig)> {
    let mut out = vec![(Variant::Full.label(TreeKind::Post), AblationConfig::full())];
    for side in [TreeKind::Post, TreeKind::Author] {
        out.extend(Variant::ABLATIONS.iter().map(|v| (v.label(side), v.config(side))));
    }
    out
}

/// Cross-validates every variant on one shared fold partition. `base.ablation`
/// is ignored; each row sets its own.
pub fn ablation_matrix(events: &[AdhocEventTree], base: &TrainConfig) -> Result<Vec<AblationRow>, EvalError> {
    let labels: Vec<Label> = events.iter().map(|e| e.label).collect();
    let folds = kfold_split(&labels, base.hyper.folds, base.hyper.seed)?;
    let mut rows = Vec::new();
    for (name, ablation) in ablation_variants() {
        let cfg = TrainConfig { ablation, ..base.clone() };
        let report = cross_validate_with(events, &cfg, &folds)?;
        log::info!("{name}: accuracy {:.4}", report.mean.accuracy);
        rows.push(AblationRow {
            name,
            ablation,
            mean: report.mean,
            folds: report.results.iter().map(|r| r.metrics).collect(),
            fold_hash: report.fold_hash,
            seed: base.hyper.seed,
        });
    }
    Ok(rows)
}

pub fn write_ablation_table<W: Write>(rows: &[AblationRow], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["variant", "accuracy", "precision", "recall", "f1", "seed", "fold_hash"])?;
    for r in rows {
        out.write_record([
            r.name.clone(),
            format!("{:.6}", r.mean.accuracy),
            format!("{:.6}", r.mean.precision),
            format!("{:.6}", r.mean.recall),
            format!("{:.6}", r.mean.f1),
            r.seed.to_string(),
            r.fold_hash.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Lower bounds of the default post-count buckets; the last bucket is open.
pub const DEFAULT_BUCKET_EDGES: [usize; 6] = [0, 10, 25, 50, 100, 150];

/// Events with `lower ≤ n < upper` responsive posts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: usize,
    pub upper: Option<usize>,
    pub count: usize,
    pub accuracy: Option<f64>,
}

/// Groups `(responsive posts, correct)` samples by increasing lower `edges`.
/// Samples below the first edge are left out.
pub fn bucket_accuracy(samples: &[(usize, bool)], edges: &[usize]) -> Result<Vec<Bucket>, EvalError> {
    if edges.is_empty() {
        return Err(EvalError::InvalidEdges("no edges".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidEdges("edges must be strictly increasing".into()));
    }
    Ok(edges
        .iter()
        .enumerate()
        .map(|(i, &lower)| {
            let upper = edges.get(i + 1).copied();
            let inside: Vec<bool> =
                samples.iter().filter(|(n, _)| *n >= lower && upper.map_or(true, |u| *n < u)).map(|(_, c)| *c).collect();
            let count = inside.len();
            let accuracy = (count > 0).then(|| inside.iter().filter(|&&c| c).count() as f64 / count as f64);
            Bucket { lower, upper, count, accuracy }
        })
        .collect())
}

/// Accuracy of `model` per responsive-post-count bucket.
pub fn bucket_by_post_count(events: &[AdhocEventTree], model: &TrainedModel, edges: &[usize]) -> Result<Vec<Bucket>, EvalError> {
    let probs = model.predict(events)?;
    let samples: Vec<(usize, bool)> =
        events.iter().zip(&probs).map(|(e, p)| (e.responsive_count(), argmax_label(*p) == e.label)).collect();
    bucket_accuracy(&samples, edges)
}

pub fn write_bucket_table<W: Write>(buckets: &[Bucket], w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lower", "upper", "count", "accuracy"])?;
    for b in buckets {
        out.write_record([
            b.lower.to_string(),
            b.upper.map_or_else(|| "inf".to_string(), |u| u.to_string()),
            b.count.to_string(),
            b.accuracy.map_or_else(String::new, |a| format!("{a:.6}")),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionNode {
    pub node_id: String,
    /// Position in chronological order, the claim being 0.
    pub index: usize,
    pub parent_id: Option<String>,
    pub alpha: f64,
}

/// Aggregation weights of one tree of one event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub event_id: String,
    pub tree: TreeKind,
    pub nodes: Vec<AttentionNode>,
    pub label: Label,
    pub prediction: Label,
}

/// One record per tree that uses weighted aggregation, nodes in chronological order.
pub fn export_attention(event: &AdhocEventTree, model: &TrainedModel) -> Result<Vec<AttentionRecord>, EvalError> {
    let prepared = model.prepare(event)?;
    let cfg = &model.config;
    let mut g = Graph::new(&model.params.store);
    let out = forward_tree(&mut g, &model.params, &prepared, &cfg.hyper, &cfg.ablation, None::<&mut ChaCha8Rng>)?;
    let prediction = argmax_label(out.probabilities(&g));
    let mut records = Vec::new();
    for kind in [TreeKind::Post, TreeKind::Author] {
        let Some(alpha) = out.trace(kind).and_then(|t| t.alpha) else { continue };
        let alpha = g.value(alpha).data();
        let nodes = event
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| AttentionNode { node_id: n.node_id.clone(), index: i, parent_id: n.parent_id.clone(), alpha: alpha[i] })
            .collect();
        records.push(AttentionRecord { event_id: event.event_id.clone(), tree: kind, nodes, label: event.label, prediction });
    }
    Ok(records)
}

/// Attention records for many events, in input order.
pub fn export_attention_all(events: &[AdhocEventTree], model: &TrainedModel) -> Result<Vec<AttentionRecord>, EvalError> {
    let per_event = events.par_iter().map(|e| export_attention(e, model)).collect::<Result<Vec<_>, _>>()?;
    Ok(per_event.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;
    use crate::train::train_model;

    #[test]
    fn fifteen_distinct_variants() {
        let v = ablation_variants();
        assert_eq!(v.len(), 15);
        assert_eq!(v[0].0, "BAET");
        let mut names: Vec<&String> = v.iter().map(|(n, _)| n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 15);
        assert!(v.iter().all(|(_, c)| c.validate().is_ok()));
        assert!(names.iter().any(|n| *n == "post: w/o AT") && names.iter().any(|n| *n == "author: w/o PT"));
    }

    #[test]
    fn buckets_partition() {
        let b = bucket_accuracy(&[(5, true), (20, false)], &[0, 10]).unwrap();
        assert_eq!(b[0], Bucket { lower: 0, upper: Some(10), count: 1, accuracy: Some(1.0) });
        assert_eq!(b[1], Bucket { lower: 10, upper: None, count: 1, accuracy: Some(0.0) });

        let samples = [(3, true), (4, false), (8, true), (9, true)];
        let all = bucket_accuracy(&samples, &[0]).unwrap();
        assert_eq!(all[0].accuracy, Some(0.75));

        let b = bucket_accuracy(&samples, &DEFAULT_BUCKET_EDGES).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b[5].lower, 150);
        assert!(b[1..].iter().all(|x| x.count == 0 && x.accuracy.is_none()));

        assert!(bucket_accuracy(&samples, &[10, 5]).is_err());
        assert!(bucket_accuracy(&samples, &[]).is_err());
    }

    #[test]
    fn attention_export_is_normalized_and_chronological() {
        let events = generate_synthetic(&SyntheticSpec { events: 10, seed: 11, ..SyntheticSpec::default() }).unwrap();
        let cfg = TrainConfig::new(Hyperparams { d: 8, epochs: 1, max_len: 12, ..Hyperparams::default() });
        let model = train_model(&events, &cfg).unwrap();
        let records = export_attention_all(&events, &model).unwrap();
        assert_eq!(records.len(), 20);
        for r in &records {
            let sum: f64 = r.nodes.iter().map(|n| n.alpha).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(r.nodes.iter().all(|n| n.alpha >= 0.0));
            assert!(r.nodes.iter().enumerate().all(|(i, n)| n.index == i));
            let json = serde_json::to_string(r).unwrap();
            assert!(json.contains("\"tree\":\"post\"") || json.contains("\"tree\":\"author\""));
        }

        let mut single = events[0].clone();
        single = AdhocEventTree::new(single.event_id.clone(), single.label, vec![single.nodes()[0].clone()]).unwrap();
        let records = export_attention(&single, &model).unwrap();
        assert!(records.iter().all(|r| r.nodes.len() == 1 && r.nodes[0].alpha == 1.0));
    }
}
