use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{NumError, Result, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the canonical order for checkpoints, optimizer state and
/// gradient buffers. Initialization draws from a seeded ChaCha stream in that
/// same order, so a store built twice with the same seed is identical.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Adds a parameter drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(NumError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name.get(name).copied().ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// `(name, shape)` for every parameter in canonical order.
    pub fn describe(&self) -> Vec<(String, Vec<usize>)> {
        self.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect()
    }

    /// Replaces every tensor's values, keeping names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.describe() != other.describe() {
            return Err(NumError::shape("copy_values_from", "identical layout", "different layout"));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`]. Parameters that never took
/// part in a forward pass keep no buffer and read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { bufs: vec![None; store.len()] }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.bufs[id.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.bufs[id.0].as_deref()
    }

    /// Gradient for `id` with missing buffers materialized as zeros.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Vec<f64> {
        self.get(id).map_or_else(|| vec![0.0; store.get(id).len()], <[f64]>::to_vec)
    }

    /// Adds `other` into `self`; used to reduce per-episode gradients.
    pub fn add_assign(&mut self, other: &Grads) {
        for (i, g) in other.bufs.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for buf in self.bufs.iter_mut().flatten() {
            buf.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs.iter().flatten().flat_map(|b| b.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }
}
