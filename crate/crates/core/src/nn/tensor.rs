use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major `f64` buffer with a same-sized gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: vec![0.0],
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Self {
        let mut t = Tensor::zeros(shape);
        for v in &mut t.values {
            *v = rng.random_range(-limit..=limit);
        }
        t
    }

    /// Glorot-uniform over `[fan_in, fan_out]`.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::uniform(shape, limit, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.values, &mut self.grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. Entries listed in `frozen` keep their value
/// through optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    frozen: Vec<bool>,
}

impl Param {
    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen.get(i).copied().unwrap_or(false)
    }

    pub fn has_frozen(&self) -> bool {
        self.frozen.iter().any(|&f| f)
    }

    pub(crate) fn split_mut(&mut self) -> (&mut Tensor, &[bool]) {
        (&mut self.tensor, &self.frozen)
    }
}

/// Ordered collection of parameters. The order is part of the model format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            frozen: vec![false; tensor.len()],
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn freeze_entries(&mut self, id: ParamId, entries: &[usize]) {
        let p = &mut self.params[id.0];
        for &i in entries {
            p.frozen[i] = true;
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.tensor.grad())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            for g in p.tensor.grad_mut() {
                *g *= factor;
            }
        }
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// Copies values (not gradients) from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamSet) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.tensor.values_mut().copy_from_slice(src.tensor.values());
        }
    }
}
