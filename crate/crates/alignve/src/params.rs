//! Named collection of trainable tensors with deterministic iteration order.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Trainable parameters, iterated in registration order. Registration order
/// is also the order in which initialization consumes the run RNG, so a seed
/// pins every weight.
#[derive(Clone, Debug)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor.with_grad()));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        Ok(&mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Registers every parameter as a gradient-tracked leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams<T> {
        let mut bound = Vec::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            bound.push((name.clone(), tape.leaf(tensor.clone())));
        }
        BoundParams {
            entries: bound,
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, tensor) in &self.entries {
            out.insert(name.clone(), tensor.cast::<U>());
        }
        out
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-tape view of a `ParamStore`: the same tensors, registered as leaves so
/// gradients can be collected after backward.
pub struct BoundParams<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> BoundParams<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }
}

/// Glorot-uniform matrix: limit sqrt(6 / (fan_in + fan_out)), gain 1. Values
/// are drawn in f64 so the consumed RNG stream is identical in both element
/// modes.
pub fn glorot_uniform<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("finite init values")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn iteration_follows_registration_order() {
        let mut store = ParamStore::<f32>::new();
        store.insert("b", Tensor::zeros(vec![2]));
        store.insert("a", Tensor::zeros(vec![3]));
        store.insert("c", Tensor::zeros(vec![1]));
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["b", "a", "c"]);
        assert_eq!(store.scalar_count(), 6);
    }

    #[test]
    fn glorot_is_seed_deterministic_and_bounded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(12345);
        let mut r2 = ChaCha8Rng::seed_from_u64(12345);
        let a = glorot_uniform::<f32>(4, 6, &mut r1);
        let b = glorot_uniform::<f32>(4, 6, &mut r2);
        assert_eq!(a.data(), b.data());
        let limit = (6.0f64 / 10.0).sqrt() as f32;
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn unknown_name_errors() {
        let store = ParamStore::<f32>::new();
        assert!(matches!(store.get("missing"), Err(Error::UnknownParam(_))));
    }
}
