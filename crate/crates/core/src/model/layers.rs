use rand::Rng;

use super::{AblationConfig, Hyperparams, ModelError, ModelParams, TreeKind, TreeParamIds};
use crate::autodiff::{Graph, Tensor, Var};
use crate::features::{AuthorFeatures, PreparedEvent, TokenizedPost, AUTHOR_ROWS, PAD};
use crate::ingest::{Label, Topology};

fn check_ids(params: &ModelParams, ids: &[usize]) -> Result<(), ModelError> {
    match ids.iter().find(|&&id| id >= params.vocab_size) {
        Some(&id) => Err(ModelError::IndexOutOfVocab { id, size: params.vocab_size }),
        None => Ok(()),
    }
}

/// Frequency-scaled embedding of the first `len` positions: row `j` is
/// `q[j] · table[ids[j]]`, so padding rows are zero.
pub fn embed_post(g: &mut Graph<'_>, params: &ModelParams, post: &TokenizedPost, len: usize) -> Result<Var, ModelError> {
    let ids = &post.ids[..len];
    check_ids(params, ids)?;
    let table = g.param(params.embedding);
    let rows = g.gather(table, ids)?;
    let d = params.d;
    let mut scale = Tensor::zeros(len, d);
    for (j, &q) in post.freq[..len].iter().enumerate() {
        scale.row_mut(j).fill(q);
    }
    Ok(g.mul_const(rows, scale)?)
}

/// Plain lookup with padding rows zeroed (no frequency scaling).
pub fn embed_post_raw(g: &mut Graph<'_>, params: &ModelParams, post: &TokenizedPost, len: usize) -> Result<Var, ModelError> {
    let ids = &post.ids[..len];
    check_ids(params, ids)?;
    let table = g.param(params.embedding);
    let rows = g.gather(table, ids)?;
    let mut mask = Tensor::zeros(len, params.d);
    for (j, &id) in ids.iter().enumerate() {
        if id != PAD {
            mask.row_mut(j).fill(1.0);
        }
    }
    Ok(g.mul_const(rows, mask)?)
}

/// `F = f^b ⊗ W^b` stacked over `f^h ⊗ W^h`, shape `16×d`.
pub fn encode_author(g: &mut Graph<'_>, params: &ModelParams, f: &AuthorFeatures) -> Result<Var, ModelError> {
    let fb = g.constant(Tensor::column_vector(&f.basic));
    let fh = g.constant(Tensor::column_vector(&f.habit));
    let wb = g.param(params.w_basic);
    let wh = g.param(params.w_habit);
    let basic = g.matmul(fb, wb)?;
    let habit = g.matmul(fh, wh)?;
    Ok(g.row_concat(&[basic, habit])?)
}

/// All 16 normalized features through one shared `1×d` transform.
pub fn encode_author_raw(g: &mut Graph<'_>, params: &ModelParams, f: &AuthorFeatures) -> Result<Var, ModelError> {
    let all: Vec<f64> = f.basic.iter().chain(&f.habit).copied().collect();
    let col = g.constant(Tensor::column_vector(&all));
    let w = g.param(params.w_raw);
    Ok(g.matmul(col, w)?)
}

/// `A(VW^Q, VW^K, VW^V)` with masked keys left out of the softmax.
pub fn self_attention(g: &mut Graph<'_>, tp: &TreeParamIds, v: Var, mask: Option<&[bool]>) -> Result<Var, ModelError> {
    let (wq, wk, wv) = (g.param(tp.w_q), g.param(tp.w_k), g.param(tp.w_v));
    let q = g.matmul(v, wq)?;
    let k = g.matmul(v, wk)?;
    let vv = g.matmul(v, wv)?;
    Ok(g.attention(q, k, vv, mask)?)
}

/// Root node matrix and its self-attention output, shared by every node of a tree.
#[derive(Clone, Copy, Debug)]
pub struct RootContext {
    pub v0: Var,
    pub attended: Var,
}

impl RootContext {
    pub fn new(g: &mut Graph<'_>, tp: &TreeParamIds, v0: Var, mask: Option<&[bool]>) -> Result<Self, ModelError> {
        let attended = self_attention(g, tp, v0, mask)?;
        Ok(RootContext { v0, attended })
    }
}

/// Root-aware attention for one node. Returns the fused matrix and the node's
/// self-attention output.
///
/// Root: `U₀ = Ṽ₀ + μ·V₀`. Others: `U_i = Ṽ_i + μ·(σ([Ṽ₀, Ṽ_i]W^a + b^a) ⊙ Ṽ_i)`.
pub fn ral_node(
    g: &mut Graph<'_>,
    tp: &TreeParamIds,
    root: &RootContext,
    v_i: Var,
    mask_i: Option<&[bool]>,
    is_root: bool,
    mu: f64,
) -> Result<(Var, Var), ModelError> {
    if is_root {
        let scaled = g.scale(root.v0, mu);
        return Ok((g.add(root.attended, scaled)?, root.attended));
    }
    let attended = self_attention(g, tp, v_i, mask_i)?;
    let joined = g.col_concat(&[root.attended, attended])?;
    let wa = g.param(tp.w_a);
    let ba = g.param(tp.b_a);
    let pre = g.matmul(joined, wa)?;
    let pre = g.add(pre, ba)?;
    let gate = g.sigmoid(pre);
    let gated = g.mul(gate, attended)?;
    let scaled = g.scale(gated, mu);
    Ok((g.add(attended, scaled)?, attended))
}

/// Mean over the listed rows.
pub fn node_pool(g: &mut Graph<'_>, u: Var, rows: &[usize]) -> Result<Var, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::AllPadding);
    }
    Ok(g.mean_rows(u, rows)?)
}

/// Top-down tree GRU. Node `i` reads its parent's state; the root reads zeros.
pub fn trvnn_forward(
    g: &mut Graph<'_>,
    tp: &TreeParamIds,
    parents: &[Option<usize>],
    inputs: &[Var],
) -> Result<Vec<Var>, ModelError> {
    let d = g.value(*inputs.first().ok_or(ModelError::AllPadding)?).cols();
    let zero = g.constant(Tensor::zeros(1, d));
    let (wu, bu, wr, wz, wh) = (g.param(tp.w_u), g.param(tp.b_u), g.param(tp.w_r), g.param(tp.w_z), g.param(tp.w_h));
    let mut hidden: Vec<Var> = Vec::with_capacity(inputs.len());
    for (i, &u) in inputs.iter().enumerate() {
        let hp = match parents[i] {
            None => zero,
            Some(p) if p < i => hidden[p],
            Some(p) => return Err(ModelError::Topology { child: i, parent: p }),
        };
        let ut = g.matmul(u, wu)?;
        let ut = g.add(ut, bu)?;
        let x = g.col_concat(&[ut, hp])?;
        let r = g.matmul(x, wr)?;
        let r = g.sigmoid(r);
        let z = g.matmul(x, wz)?;
        let z = g.sigmoid(z);
        let hr = g.mul(hp, r)?;
        let xc = g.col_concat(&[ut, hr])?;
        let c = g.matmul(xc, wh)?;
        let c = g.tanh(c);
        let delta = g.sub(c, hp)?;
        let step = g.mul(z, delta)?;
        hidden.push(g.add(hp, step)?);
    }
    Ok(hidden)
}

/// Leaf max-pool, root enhancement `h_E = tanh([h₀, h_L]W^E + b^E)`, then
/// `α = softmax(h_i·w_c)` over `{h_E, h₁, …}` and `h* = Σ α_i h_i`.
/// Returns `(h*, α)` with `α` as a `1×(n+1)` row in node order.
pub fn tal_aggregate(
    g: &mut Graph<'_>,
    tp: &TreeParamIds,
    topology: &Topology,
    hidden: &[Var],
) -> Result<(Var, Var), ModelError> {
    let leaves: Vec<Var> = topology.leaves().into_iter().map(|i| hidden[i]).collect();
    let h_leaf = g.max_over(&leaves)?;
    let joined = g.col_concat(&[hidden[0], h_leaf])?;
    let (we, be, wc) = (g.param(tp.w_e), g.param(tp.b_e), g.param(tp.w_c));
    let pre = g.matmul(joined, we)?;
    let pre = g.add(pre, be)?;
    let h_root = g.tanh(pre);
    let mut rows = Vec::with_capacity(hidden.len());
    rows.push(h_root);
    rows.extend_from_slice(&hidden[1..]);
    let stacked = g.row_concat(&rows)?;
    let scores = g.matmul(stacked, wc)?;
    let scores = g.transpose(scores);
    let alpha = g.row_softmax(scores);
    let h_star = g.matmul(alpha, stacked)?;
    Ok((h_star, alpha))
}

/// `softmax([h_post ⊕ h_author]W^y + b^y)`; a dropped tree contributes zeros.
pub fn predict<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    params: &ModelParams,
    h_post: Option<Var>,
    h_author: Option<Var>,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<(Var, Var), ModelError> {
    let d = params.d;
    let half = |h: Option<Var>, g: &mut Graph<'_>| h.unwrap_or_else(|| g.constant(Tensor::zeros(1, d)));
    let hp = half(h_post, g);
    let ha = half(h_author, g);
    let h_o = g.col_concat(&[hp, ha])?;
    let dropped = g.dropout(h_o, dropout, rng)?;
    let (wy, by) = (g.param(params.w_y), g.param(params.b_y));
    let logits = g.matmul(dropped, wy)?;
    let logits = g.add(logits, by)?;
    Ok((g.row_softmax(logits), h_o))
}

/// Cross-entropy of one prediction; index 1 is the non-rumor probability.
pub fn loss(g: &mut Graph<'_>, probs: Var, label: Label) -> Result<Var, ModelError> {
    Ok(g.nll(probs, label.index())?)
}

/// `λ·Σ‖W‖²` over weight tensors (biases excluded). `None` when `λ = 0`.
pub fn l2_penalty(g: &mut Graph<'_>, params: &ModelParams, lambda: f64) -> Result<Option<Var>, ModelError> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let terms: Vec<Var> = params
        .store
        .ids()
        .filter(|&id| params.store.decays(id))
        .map(|id| {
            let p = g.param(id);
            g.sum_squares(p)
        })
        .collect();
    let stacked = g.row_concat(&terms)?;
    let total = g.sum(stacked);
    Ok(Some(g.scale(total, lambda)))
}

/// Intermediate values of one tree's pass.
#[derive(Clone, Debug)]
pub struct TreeTrace {
    /// Self-attention outputs per node (empty when RAL is off); their softmax
    /// rows are available through [`Graph::attention_probs`].
    pub attention: Vec<Var>,
    pub pooled: Vec<Var>,
    pub hidden: Vec<Var>,
    /// Tree attention weights as a `1×(n+1)` row (absent when TAL is off).
    pub alpha: Option<Var>,
    pub h_star: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub probs: Var,
    pub h_o: Var,
    pub post: Option<TreeTrace>,
    pub author: Option<TreeTrace>,
}

impl ForwardOutput {
    pub fn probabilities(&self, g: &Graph<'_>) -> [f64; 2] {
        let p = g.value(self.probs).data();
        [p[0], p[1]]
    }

    pub fn trace(&self, kind: TreeKind) -> Option<&TreeTrace> {
        match kind {
            TreeKind::Post => self.post.as_ref(),
            TreeKind::Author => self.author.as_ref(),
        }
    }
}

struct NodeInputs {
    matrices: Vec<Var>,
    masks: Vec<Option<Vec<bool>>>,
    pool_rows: Vec<Vec<usize>>,
}

fn post_inputs(g: &mut Graph<'_>, params: &ModelParams, event: &PreparedEvent, tnp: bool) -> Result<NodeInputs, ModelError> {
    // Positions past the longest real post are padding in every node and never
    // reach the pooled vectors, so they are trimmed away up front.
    let len = event.posts.iter().map(TokenizedPost::real_len).max().unwrap_or(0).max(1);
    let len = len.min(event.posts.iter().map(TokenizedPost::max_len).min().unwrap_or(1));
    let mut out = NodeInputs { matrices: Vec::new(), masks: Vec::new(), pool_rows: Vec::new() };
    for post in &event.posts {
        let m = if tnp { embed_post(g, params, post, len)? } else { embed_post_raw(g, params, post, len)? };
        let mask: Vec<bool> = post.ids[..len].iter().map(|&id| id != PAD).collect();
        out.pool_rows.push((0..len).filter(|&j| mask[j]).collect());
        out.masks.push(Some(mask));
        out.matrices.push(m);
    }
    Ok(out)
}

fn author_inputs(g: &mut Graph<'_>, params: &ModelParams, event: &PreparedEvent, tnp: bool) -> Result<NodeInputs, ModelError> {
    let mut out = NodeInputs { matrices: Vec::new(), masks: Vec::new(), pool_rows: Vec::new() };
    for f in &event.authors {
        let m = if tnp { encode_author(g, params, f)? } else { encode_author_raw(g, params, f)? };
        out.matrices.push(m);
        out.masks.push(None);
        out.pool_rows.push((0..AUTHOR_ROWS).collect());
    }
    Ok(out)
}

fn tree_forward<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    params: &ModelParams,
    event: &PreparedEvent,
    kind: TreeKind,
    hp: &Hyperparams,
    ablation: &AblationConfig,
    mut rng: Option<&mut R>,
) -> Result<TreeTrace, ModelError> {
    let modules = ablation.modules(kind);
    let tp = params.tree(kind);
    let inputs = match kind {
        TreeKind::Post => post_inputs(g, params, event, modules.tnp)?,
        TreeKind::Author => author_inputs(g, params, event, modules.tnp)?,
    };

    let mut attention = Vec::new();
    let fused: Vec<Var> = if modules.ral {
        let root = RootContext::new(g, tp, inputs.matrices[0], inputs.masks[0].as_deref())?;
        let mut fused = Vec::with_capacity(inputs.matrices.len());
        for (i, &v) in inputs.matrices.iter().enumerate() {
            let (u, att) = ral_node(g, tp, &root, v, inputs.masks[i].as_deref(), i == 0, hp.mu)?;
            fused.push(u);
            attention.push(att);
        }
        fused
    } else {
        inputs.matrices.clone()
    };

    let mut pooled = Vec::with_capacity(fused.len());
    for (u, rows) in fused.iter().zip(&inputs.pool_rows) {
        let p = match node_pool(g, *u, rows) {
            Ok(p) => p,
            Err(ModelError::AllPadding) => g.constant(Tensor::zeros(1, params.d)),
            Err(e) => return Err(e),
        };
        pooled.push(g.dropout(p, hp.dropout, rng.as_deref_mut())?);
    }

    let hidden = if modules.trvnn {
        trvnn_forward(g, tp, event.topology.parents(), &pooled)?
    } else {
        pooled.clone()
    };

    let (h_star, alpha) = if modules.tal {
        let (h, a) = tal_aggregate(g, tp, &event.topology, &hidden)?;
        (h, Some(a))
    } else {
        (*hidden.last().expect("at least one node"), None)
    };
    Ok(TreeTrace { attention, pooled, hidden, alpha, h_star })
}

/// Full pass over one event. Dropout is active only when `rng` is given.
pub fn forward_tree<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    params: &ModelParams,
    event: &PreparedEvent,
    hp: &Hyperparams,
    ablation: &AblationConfig,
    mut rng: Option<&mut R>,
) -> Result<ForwardOutput, ModelError> {
    ablation.validate()?;
    let post = if ablation.use_post_tree {
        Some(tree_forward(g, params, event, TreeKind::Post, hp, ablation, rng.as_deref_mut())?)
    } else {
        None
    };
    let author = if ablation.use_author_tree {
        Some(tree_forward(g, params, event, TreeKind::Author, hp, ablation, rng.as_deref_mut())?)
    } else {
        None
    };
    let (probs, h_o) = predict(
        g,
        params,
        post.as_ref().map(|t| t.h_star),
        author.as_ref().map(|t| t.h_star),
        hp.dropout,
        rng,
    )?;
    Ok(ForwardOutput { probs, h_o, post, author })
}

/// Forward pass plus cross-entropy against the event's label.
pub fn event_loss<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    params: &ModelParams,
    event: &PreparedEvent,
    hp: &Hyperparams,
    ablation: &AblationConfig,
    rng: Option<&mut R>,
) -> Result<(ForwardOutput, Var), ModelError> {
    let out = forward_tree(g, params, event, hp, ablation, rng)?;
    let l = loss(g, out.probs, event.label)?;
    Ok((out, l))
}
