use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TreeKind;
use crate::autodiff::{ParamId, ParamStore, Tensor};

/// Attention, GRU and aggregation weights of one tree.
#[derive(Clone, Copy, Debug)]
pub struct TreeParamIds {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub w_u: ParamId,
    pub b_u: ParamId,
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w_h: ParamId,
    pub w_e: ParamId,
    pub b_e: ParamId,
    pub w_c: ParamId,
}

/// Every trainable tensor, addressable by name through [`ModelParams::store`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub d: usize,
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub w_basic: ParamId,
    pub w_habit: ParamId,
    /// Single feature-to-width transform used when the author TNP is ablated.
    pub w_raw: ParamId,
    pub post: TreeParamIds,
    pub author: TreeParamIds,
    pub w_y: ParamId,
    pub b_y: ParamId,
}

fn normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect()).expect("sized")
}

impl ModelParams {
    /// Normal initialization: weights with std `1/√fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(vocab_size: usize, d: usize, rng: &mut R) -> ModelParams {
        let mut store = ParamStore::new();
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let embedding = store.insert("post.embedding", normal(rng, vocab_size, d, inv(d)), true);
        let w_basic = store.insert("author.w_basic", normal(rng, 1, d, 1.0), true);
        let w_habit = store.insert("author.w_habit", normal(rng, 1, d, 1.0), true);
        let w_raw = store.insert("author.w_raw", normal(rng, 1, d, 1.0), true);
        let mut tree = |kind: TreeKind, store: &mut ParamStore| {
            let p = kind.name();
            let mut w = |name: &str, rows: usize, cols: usize| {
                store.insert(format!("{p}.{name}"), normal(rng, rows, cols, inv(rows)), true)
            };
            let w_q = w("ral.w_q", d, d);
            let w_k = w("ral.w_k", d, d);
            let w_v = w("ral.w_v", d, d);
            let w_a = w("ral.w_a", 2 * d, d);
            let w_u = w("trvnn.w_u", d, d);
            let w_r = w("trvnn.w_r", 2 * d, d);
            let w_z = w("trvnn.w_z", 2 * d, d);
            let w_h = w("trvnn.w_h", 2 * d, d);
            let w_e = w("tal.w_e", 2 * d, d);
            let w_c = w("tal.w_c", d, 1);
            let mut b = |name: &str| store.insert(format!("{p}.{name}"), Tensor::zeros(1, d), false);
            let b_a = b("ral.b_a");
            let b_u = b("trvnn.b_u");
            let b_e = b("tal.b_e");
            TreeParamIds { w_q, w_k, w_v, w_a, b_a, w_u, b_u, w_r, w_z, w_h, w_e, b_e, w_c }
        };
        let post = tree(TreeKind::Post, &mut store);
        let author = tree(TreeKind::Author, &mut store);
        let w_y = store.insert("predict.w_y", normal(rng, 2 * d, 2, inv(2 * d)), true);
        let b_y = store.insert("predict.b_y", Tensor::zeros(1, 2), false);
        ModelParams { store, d, vocab_size, embedding, w_basic, w_habit, w_raw, post, author, w_y, b_y }
    }

    pub fn tree(&self, kind: TreeKind) -> &TreeParamIds {
        match kind {
            TreeKind::Post => &self.post,
            TreeKind::Author => &self.author,
        }
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.store.get(id).shape(), value.shape(), "shape of {}", self.store.name(id));
        *self.store.get_mut(id) = value;
    }
}
