use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples to score")]
    EmptyInput,
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

/// Binary classification scores with rumor (label 0) as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Scores averaged across folds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub const POSITIVE_CLASS_NOTE: &str = "positive class = rumor (label 0)";

impl Metrics {
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Metrics { accuracy: ratio(tp + tn, tp + fp + fn_ + tn), precision, recall, f1, tp, fp, fn_, tn }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn mean(all: &[Metrics]) -> MeanMetrics {
        if all.is_empty() {
            return MeanMetrics::default();
        }
        let n = all.len() as f64;
        MeanMetrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: all.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

/// Predicted class of a probability pair; ties go to rumor.
pub fn argmax_label(probs: [f64; 2]) -> Label {
    if probs[1] > probs[0] {
        Label::NonRumor
    } else {
        Label::Rumor
    }
}

pub fn compute_metrics(predictions: &[[f64; 2]], labels: &[Label]) -> Result<Metrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, &y) in predictions.iter().zip(labels) {
        match (argmax_label(*p), y) {
            (Label::Rumor, Label::Rumor) => tp += 1,
            (Label::Rumor, Label::NonRumor) => fp += 1,
            (Label::NonRumor, Label::Rumor) => fn_ += 1,
            (Label::NonRumor, Label::NonRumor) => tn += 1,
        }
    }
    Ok(Metrics::from_confusion(tp, fp, fn_, tn))
}
