//! Named, ordered collection of trainable tensors.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_grad());
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a `rows x cols` matrix drawn uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let values = (0..rows * cols)
            .map(|_| T::of(rng.random_range(-scale..=scale)))
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, values)?)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(vec![rows, cols])?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[T]) {
        let g = self.tensors[id.0]
            .grad_mut()
            .expect("parameters always carry a gradient slot");
        for (acc, v) in g.iter_mut().zip(grad) {
            *acc += *v;
        }
    }

    /// Overwrites the values of every parameter present in `other` by name.
    /// Shapes must agree.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut loaded = 0;
        for (name, src) in other.iter() {
            if let Some(id) = self.id(name) {
                let dst = self.get_mut(id);
                if dst.shape() != src.shape() {
                    return Err(Error::shape("load_from", dst.shape(), src.shape()));
                }
                dst.values_mut().copy_from_slice(src.values());
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}
