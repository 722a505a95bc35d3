use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::params::{ParamGrad, ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt, matmul_tn};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    /// Second operand may be a `1×c` row broadcast over every row of the first.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    RowConcat(Vec<Var>),
    ColConcat(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    RowSoftmax(Var),
    Attention { q: Var, k: Var, v: Var, probs: Tensor, scale: f64 },
    MaxOver { inputs: Vec<Var>, argmax: Vec<usize> },
    MeanRows { input: Var, rows: Vec<usize> },
    Gather { table: Var, ids: Vec<usize> },
    Transpose(Var),
    Sum(Var),
    SumSquares(Var),
    Nll { probs: Var, class: usize, clamped: bool },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Probability clamp used by [`Graph::nll`].
pub const PROB_CLAMP: f64 = 1e-12;

/// A recorded computation. Nodes are appended in evaluation order, so the
/// recording order is a topological order and backward walks it in reverse.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Backward through a row softmax: `dS = P ⊙ (dP − rowsum(dP ⊙ P))`.
fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = dprobs.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (pi, dpi)) in out.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *o = pi * (dpi - dot);
        }
    }
    out
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Softmax probabilities saved by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf value. With `requires_grad` its gradient is reported by backward.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    /// Parameter node, created once per graph and reused afterwards.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = matmul(ta, tb);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = ta.clone();
        if ta.shape() == tb.shape() {
            out.add_assign(tb);
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            for r in 0..out.rows() {
                for (o, x) in out.row_mut(r).iter_mut().zip(tb.data()) {
                    *o += x;
                }
            }
        } else {
            return Err(mismatch("add", ta, tb));
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant of equal shape.
    pub fn mul_const(&mut self, a: Var, k: Tensor) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.shape() != k.shape() {
            return Err(mismatch("mul_const", ta, &k));
        }
        let data = ta.data().iter().zip(k.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::MulConst(a, k), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// Stacks inputs vertically; all must share a column count.
    pub fn row_concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = self.value(*parts.first().ok_or(AutodiffError::Empty("row_concat"))?);
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("row_concat", first, t));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::RowConcat(parts.to_vec()), rg))
    }

    /// Joins inputs side by side; all must share a row count.
    pub fn col_concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = self.value(*parts.first().ok_or(AutodiffError::Empty("col_concat"))?);
        let rows = first.rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("col_concat", first, t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ColConcat(parts.to_vec()), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.any_grad(&[a]);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// `softmax(QKᵀ/√d_k)V`, with keys whose `key_mask` entry is false excluded
    /// from every softmax row. A row with no valid key yields zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, key_mask: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.cols() != tk.cols() {
            return Err(mismatch("attention(q,k)", tq, tk));
        }
        if tk.rows() != tv.rows() {
            return Err(mismatch("attention(k,v)", tk, tv));
        }
        if let Some(mask) = key_mask {
            if mask.len() != tk.rows() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "attention(mask)",
                    left: (mask.len(), 1),
                    right: tk.shape(),
                });
            }
        }
        let scale = 1.0 / (tq.cols().max(1) as f64).sqrt();
        let mut probs = matmul_nt(tq, tk);
        for r in 0..probs.rows() {
            let row = probs.row_mut(r);
            match key_mask {
                None => {
                    row.iter_mut().for_each(|x| *x *= scale);
                    softmax_in_place(row);
                }
                Some(mask) => {
                    let max = row
                        .iter()
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|(x, _)| x * scale)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (x, &m) in row.iter_mut().zip(mask) {
                        *x = if m { (*x * scale - max).exp() } else { 0.0 };
                        total += *x;
                    }
                    if total > 0.0 {
                        row.iter_mut().for_each(|x| *x /= total);
                    }
                }
            }
        }
        let out = matmul(&probs, tv);
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(out, Op::Attention { q, k, v, probs, scale }, rg))
    }

    /// Elementwise maximum across same-shaped inputs. Ties go to the earliest input.
    pub fn max_over(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let first = self.value(*inputs.first().ok_or(AutodiffError::Empty("max_over"))?);
        let mut out = first.clone();
        let mut argmax = vec![0usize; out.len()];
        for (idx, &v) in inputs.iter().enumerate().skip(1) {
            let t = self.value(v);
            if t.shape() != first.shape() {
                return Err(mismatch("max_over", first, t));
            }
            for (j, (o, x)) in out.data_mut().iter_mut().zip(t.data()).enumerate() {
                if *x > *o {
                    *o = *x;
                    argmax[j] = idx;
                }
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(out, Op::MaxOver { inputs: inputs.to_vec(), argmax }, rg))
    }

    /// Mean of the selected rows, as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if rows.is_empty() {
            return Err(AutodiffError::Empty("mean_rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, rows: t.rows() });
        }
        let mut out = Tensor::zeros(1, t.cols());
        for &r in rows {
            for (o, x) in out.data_mut().iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        out.scale_assign(1.0 / rows.len() as f64);
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::MeanRows { input: a, rows: rows.to_vec() }, rg))
    }

    /// Row lookup: output row `j` is `table[ids[j]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (j, &id) in ids.iter().enumerate() {
            if id >= t.rows() {
                return Err(AutodiffError::IndexOutOfRange { index: id, rows: t.rows() });
            }
            out.row_mut(j).copy_from_slice(t.row(id));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum_squares());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::SumSquares(a), rg)
    }

    /// `−ln(clamp(p[0, class]))` on a `1×c` probability row.
    pub fn nll(&mut self, probs: Var, class: usize) -> Result<Var, AutodiffError> {
        let t = self.value(probs);
        if t.rows() != 1 || class >= t.cols() {
            return Err(AutodiffError::IndexOutOfRange { index: class, rows: t.cols() });
        }
        let p = t.get(0, class);
        let clamped_p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let out = Tensor::scalar(-clamped_p.ln());
        let rg = self.any_grad(&[probs]);
        Ok(self.push(out, Op::Nll { probs, class, clamped: clamped_p != p }, rg))
    }

    /// Inverted dropout. `rng = None` (evaluation mode) is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var, AutodiffError> {
        let Some(rng) = rng else { return Ok(a) };
        if rate <= 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.value(a).shape();
        let keep = 1.0 - rate;
        let data = (0..rows * cols).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let mask = Tensor::from_vec(rows, cols, data)?;
        self.mul_const(a, mask)
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(AutodiffError::NotScalarLoss { rows: lt.rows(), cols: lt.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut row_grads: HashMap<usize, BTreeMap<usize, Vec<f64>>> = HashMap::new();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads, &mut row_grads);
        }

        let mut params: Vec<Option<ParamGrad>> = vec![None; self.store.len()];
        let mut leaves = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            match (&node.op, &node.value) {
                (Op::Param, Value::Param(id)) => {
                    let dense = grads[idx].take();
                    let sparse = row_grads.remove(&idx);
                    let shape = self.store.get(*id).shape();
                    params[id.0] = match (dense, sparse) {
                        (None, None) => None,
                        (Some(d), None) => Some(ParamGrad::Dense(d)),
                        (None, Some(touched)) => Some(ParamGrad::Rows { rows: shape.0, cols: shape.1, touched }),
                        (Some(d), Some(touched)) => {
                            let mut d = ParamGrad::Dense(d).to_dense();
                            ParamGrad::Rows { rows: shape.0, cols: shape.1, touched }.add_to(&mut d);
                            Some(ParamGrad::Dense(d))
                        }
                    };
                }
                (Op::Leaf, _) if node.requires_grad => {
                    let t = self.value(Var(idx));
                    let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()));
                    leaves.insert(idx, g);
                }
                _ => {}
            }
        }
        Ok(Gradients { params, leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backward_node(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        row_grads: &mut HashMap<usize, BTreeMap<usize, Vec<f64>>>,
    ) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, matmul_nt(g, self.value(*b)));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let tb = self.value(*b);
                    if tb.shape() == g.shape() {
                        self.accumulate(grads, *b, g.clone());
                    } else {
                        let mut acc = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, x) in acc.data_mut().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        self.accumulate(grads, *b, acc);
                    }
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
                }
            }
            Op::MulConst(a, k) => {
                let d = g.data().iter().zip(k.data()).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| x * k)),
            Op::RowConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.requires_grad(p) {
                        let slice = g.data()[offset * g.cols()..(offset + rows) * g.cols()].to_vec();
                        self.accumulate(grads, p, Tensor::from_vec(rows, g.cols(), slice).unwrap());
                    }
                    offset += rows;
                }
            }
            Op::ColConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut part = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(grads, p, part);
                    }
                    offset += cols;
                }
            }
            Op::Sigmoid(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gx, y)| gx * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
            }
            Op::Tanh(a) => {
                let d = g.data().iter().zip(out.data()).map(|(gx, y)| gx * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
            }
            Op::RowSoftmax(a) => self.accumulate(grads, *a, softmax_backward(out, g)),
            Op::Attention { q, k, v, probs, scale } => {
                if self.requires_grad(*v) {
                    self.accumulate(grads, *v, matmul_tn(probs, g));
                }
                if self.requires_grad(*q) || self.requires_grad(*k) {
                    let dprobs = matmul_nt(g, self.value(*v));
                    let mut dscores = softmax_backward(probs, &dprobs);
                    dscores.scale_assign(*scale);
                    if self.requires_grad(*q) {
                        self.accumulate(grads, *q, matmul(&dscores, self.value(*k)));
                    }
                    if self.requires_grad(*k) {
                        self.accumulate(grads, *k, matmul_tn(&dscores, self.value(*q)));
                    }
                }
            }
            Op::MaxOver { inputs, argmax } => {
                for (which, &inp) in inputs.iter().enumerate() {
                    if !self.requires_grad(inp) {
                        continue;
                    }
                    let d = g
                        .data()
                        .iter()
                        .zip(argmax)
                        .map(|(gx, &am)| if am == which { *gx } else { 0.0 })
                        .collect();
                    self.accumulate(grads, inp, Tensor::from_vec(g.rows(), g.cols(), d).unwrap());
                }
            }
            Op::MeanRows { input, rows } => {
                let t = self.value(*input);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                let k = 1.0 / rows.len() as f64;
                for &r in rows {
                    for (o, x) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o += x * k;
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::Gather { table, ids } => {
                let tnode = &self.nodes[table.0];
                if matches!(tnode.op, Op::Param) {
                    let cols = g.cols();
                    let entry = row_grads.entry(table.0).or_default();
                    for (j, &id) in ids.iter().enumerate() {
                        let row = entry.entry(id).or_insert_with(|| vec![0.0; cols]);
                        for (o, x) in row.iter_mut().zip(g.row(j)) {
                            *o += x;
                        }
                    }
                } else {
                    let t = self.value(*table);
                    let mut d = Tensor::zeros(t.rows(), t.cols());
                    for (j, &id) in ids.iter().enumerate() {
                        for (o, x) in d.row_mut(id).iter_mut().zip(g.row(j)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *table, d);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.data()[0]));
            }
            Op::SumSquares(a) => {
                let k = 2.0 * g.data()[0];
                self.accumulate(grads, *a, self.value(*a).map(|x| k * x));
            }
            Op::Nll { probs, class, clamped } => {
                let t = self.value(*probs);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                if !clamped {
                    d.set(0, *class, -g.data()[0] / t.get(0, *class));
                }
                self.accumulate(grads, *probs, d);
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<ParamGrad>>,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of a parameter, or `None` if the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&ParamGrad> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf recorded with `requires_grad = true`.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Adds every parameter gradient into `dst` (indexed by parameter id).
    pub fn accumulate_into(&self, dst: &mut [Tensor]) {
        for (slot, g) in dst.iter_mut().zip(&self.params) {
            if let Some(g) = g {
                g.add_to(slot);
            }
        }
    }
}
