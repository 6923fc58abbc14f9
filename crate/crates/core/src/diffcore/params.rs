use indexmap::IndexMap;

use crate::diffcore::graph::{Gradients, Graph};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub(crate) fn get_full(&self, name: &str) -> Option<(usize, &Tensor)> {
        self.params.get_full(name).map(|(i, _, t)| (i, t))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Adds parameter gradients from `grads` into the stored tensors.
    ///
    /// Every parameter ends up with a gradient buffer, zero when it did not
    /// reach the loss, so the optimizer can tell a forgotten backward pass
    /// from an unused weight.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) {
        for t in self.params.values_mut() {
            t.grad_mut();
        }
        for (var, index) in graph.param_leaves() {
            if let Some(g) = grads.get(var) {
                let (_, t) = self.params.get_index_mut(index).expect("param index from this store");
                for (dst, src) in t.grad_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// Global L2 norm of all gradients present.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(Tensor::grad)
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}
