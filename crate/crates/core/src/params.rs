//! Named parameters with gradient and AdaGrad state.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added under the square root of the AdaGrad denominator.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adagrad_sum: Tensor,
    /// Frozen parameters receive gradients but are never updated.
    pub frozen: bool,
    /// Column-sparse parameters (the embedding table) are regularized and
    /// updated only on columns touched since the last step.
    pub sparse_columns: bool,
    touched: BTreeSet<usize>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            adagrad_sum: Tensor::zeros(&shape),
            value,
            frozen: false,
            sparse_columns: false,
            touched: BTreeSet::new(),
        }
    }

    pub fn touched_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.touched.iter().copied()
    }

    fn column_indices(&self, col: usize) -> impl Iterator<Item = usize> {
        let cols = self.value.cols();
        let rows = self.value.rows();
        (0..rows).map(move |r| r * cols + col)
    }
}

/// Diagonal AdaGrad: `sum += g²; value -= alpha / sqrt(sum + eps) · g`; the gradient is then cleared.
pub fn adagrad_step(p: &mut Parameter, alpha: f64) {
    if !p.frozen {
        if p.sparse_columns {
            let touched: Vec<usize> = p.touched.iter().copied().collect();
            for col in touched {
                for i in p.column_indices(col) {
                    adagrad_element(p, i, alpha);
                }
            }
        } else {
            for i in 0..p.value.len() {
                adagrad_element(p, i, alpha);
            }
        }
    }
    p.grad.fill(0.0);
    p.touched.clear();
}

#[inline]
fn adagrad_element(p: &mut Parameter, i: usize, alpha: f64) {
    let g = p.grad.data()[i];
    if g == 0.0 {
        return;
    }
    let sum = p.adagrad_sum.data()[i] + g * g;
    p.adagrad_sum.data_mut()[i] = sum;
    p.value.data_mut()[i] -= alpha / (sum + ADAGRAD_EPSILON).sqrt() * g;
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a parameter, drawing its initial value from the store's seeded generator.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let len: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; len],
            Init::Uniform(scale) => (0..len)
                .map(|_| self.rng.random_range(-scale..=scale))
                .collect(),
        };
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.insert(Parameter::new(name, value)))
    }

    pub(crate) fn insert(&mut self, param: Parameter) -> ParamId {
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f64] {
        self.params[id.0].value.data()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.touched.clear();
        }
    }

    /// Adds `scale · g` into the stored gradients, recording touched sparse columns.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (i, buf) in grads.dense.iter().enumerate() {
            if let Some(buf) = buf {
                for (g, &v) in self.params[i].grad.data_mut().iter_mut().zip(buf) {
                    *g += scale * v;
                }
            }
        }
        for (&i, columns) in &grads.sparse {
            let p = &mut self.params[i];
            let cols = p.value.cols();
            for (&col, column) in columns {
                p.touched.insert(col);
                for (r, &v) in column.iter().enumerate() {
                    p.grad.data_mut()[r * cols + col] += scale * v;
                }
            }
        }
    }

    /// Gradient of `λ/2·‖θ‖²`: adds `λ·value` to every dense parameter's
    /// gradient and to the touched columns of sparse ones.
    pub fn l2_gradient(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for p in &mut self.params {
            if p.sparse_columns {
                let touched: Vec<usize> = p.touched.iter().copied().collect();
                for col in touched {
                    for i in p.column_indices(col) {
                        let v = p.value.data()[i];
                        p.grad.data_mut()[i] += lambda * v;
                    }
                }
            } else {
                let value = p.value.data().to_vec();
                for (g, v) in p.grad.data_mut().iter_mut().zip(value) {
                    *g += lambda * v;
                }
            }
        }
    }

    pub fn adagrad_step(&mut self, alpha: f64) {
        for p in &mut self.params {
            adagrad_step(p, alpha);
        }
    }

    /// Overwrites every value with a draw from a seeded uniform distribution.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
    }
}

/// Per-sentence gradient buffers, allocated lazily and kept column-sparse for
/// the embedding table.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    dense: Vec<Option<Vec<f64>>>,
    sparse: BTreeMap<usize, BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dense_mut(&mut self, store: &ParamStore, id: ParamId) -> &mut [f64] {
        if self.dense.len() <= id.0 {
            self.dense.resize(id.0 + 1, None);
        }
        self.dense[id.0].get_or_insert_with(|| vec![0.0; store.params[id.0].value.len()])
    }

    pub fn column_mut(&mut self, id: ParamId, col: usize, rows: usize) -> &mut [f64] {
        self.sparse
            .entry(id.0)
            .or_default()
            .entry(col)
            .or_insert_with(|| vec![0.0; rows])
    }

    pub fn merge(&mut self, other: &Gradients) {
        if self.dense.len() < other.dense.len() {
            self.dense.resize(other.dense.len(), None);
        }
        for (mine, theirs) in self.dense.iter_mut().zip(&other.dense) {
            if let Some(theirs) = theirs {
                match mine {
                    Some(m) => m.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                    None => *mine = Some(theirs.clone()),
                }
            }
        }
        for (&id, columns) in &other.sparse {
            let target = self.sparse.entry(id).or_default();
            for (&col, column) in columns {
                match target.get_mut(&col) {
                    Some(m) => m.iter_mut().zip(column).for_each(|(a, b)| *a += b),
                    None => {
                        target.insert(col, column.clone());
                    }
                }
            }
        }
    }

    /// Columns of a sparse parameter that received any gradient.
    pub fn touched_columns(&self, id: ParamId) -> Vec<usize> {
        self.sparse
            .get(&id.0)
            .map(|c| c.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.iter().all(Option::is_none) && self.sparse.is_empty()
    }
}
