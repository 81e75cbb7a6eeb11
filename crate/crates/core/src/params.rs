//! Named parameter tensors and their gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Order is insertion order and is
/// what the checkpoint manifest follows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.insert_with(name, value, true)
    }

    pub fn insert_with(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradients aligned with a [`ParamStore`], one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Gradients {
            tensors: store
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Tensor<T>>) -> Self {
        Gradients { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Contract(format!(
                "gradient sets of different sizes: {} vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.tensors.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn global_norm(&self) -> T {
        self.tensors.iter().map(Tensor::sq_norm).sum::<T>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }
}
