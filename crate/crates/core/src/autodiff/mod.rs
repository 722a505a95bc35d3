//! Minimal reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every primitive application in evaluation order and
//! holds a borrowed [`ParamStore`]. [`Graph::backward`] replays the record in
//! reverse and returns [`Gradients`] for parameters and for leaves created
//! with `requires_grad`. Gradients from a tensor used twice add up.
//!
//! Embedding lookups ([`Graph::gather`]) on a parameter table produce a sparse
//! row gradient so large vocabularies don't cost a dense table per graph.

mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Var, PROB_CLAMP};
pub use params::{ParamGrad, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{len} values cannot fill a {rows}x{cols} tensor")]
    BadData { rows: usize, cols: usize, len: usize },
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backward gradients against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every coordinate of every parameter.
///
/// `loss_fn` builds the loss on a fresh graph; it is called once for the
/// analytic pass and twice per coordinate.
pub fn grad_check<F, E>(store: &ParamStore, eps: f64, loss_fn: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new(s);
        let loss = loss_fn(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(v).into());
        }
        Ok(v)
    };

    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(AutodiffError::NonFiniteLoss(v).into());
        }
        g.backward(loss)?
    };

    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let cols = store.get(id).cols();
        for flat in 0..store.get(id).len() {
            let original = store.get(id).data()[flat];
            work.get_mut(id).data_mut()[flat] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[flat] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[flat] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.param(id).map_or(0.0, |g| g.get(flat / cols, flat % cols));
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), flat));
            }
        }
    }
    Ok(report)
}
