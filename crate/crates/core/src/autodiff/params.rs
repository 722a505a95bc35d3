use std::collections::{BTreeMap, HashMap};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// `decay` marks tensors that take part in the L2 penalty (weights, not biases).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    decay: Vec<bool>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.decay.push(decay);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.values.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }
}

/// Gradient of one parameter: dense, or a set of touched rows (embedding lookups).
#[derive(Clone, Debug)]
pub enum ParamGrad {
    Dense(Tensor),
    Rows { rows: usize, cols: usize, touched: BTreeMap<usize, Vec<f64>> },
}

impl ParamGrad {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        match self {
            ParamGrad::Dense(t) => t.get(r, c),
            ParamGrad::Rows { touched, .. } => touched.get(&r).map_or(0.0, |row| row[c]),
        }
    }

    pub fn add_to(&self, dst: &mut Tensor) {
        match self {
            ParamGrad::Dense(t) => dst.add_assign(t),
            ParamGrad::Rows { touched, .. } => {
                for (&r, row) in touched {
                    for (d, g) in dst.row_mut(r).iter_mut().zip(row) {
                        *d += g;
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor {
        match self {
            ParamGrad::Dense(t) => t.clone(),
            ParamGrad::Rows { rows, cols, .. } => {
                let mut t = Tensor::zeros(*rows, *cols);
                self.add_to(&mut t);
                t
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ParamGrad::Dense(t) => t.data().iter().all(|&x| x == 0.0),
            ParamGrad::Rows { touched, .. } => touched.values().flatten().all(|&x| x == 0.0),
        }
    }
}
