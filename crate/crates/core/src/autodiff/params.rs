use std::collections::BTreeMap;

use crate::error::{config_err, Result};
use crate::geom::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Learnable tensors keyed by a stable path such as `block.2.spatial.phi_e.w1`.
/// Iteration order is the lexicographic path order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(config_err(format!("duplicate parameter path {path}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(path, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path).map(|p| &p.value)
    }

    pub fn require(&self, path: &str) -> Result<&Tensor<T>> {
        self.get(path)
            .ok_or_else(|| config_err(format!("missing parameter {path}")))
    }

    pub fn value_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(path).map(|p| &mut p.value)
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, path: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(path)
            .ok_or_else(|| config_err(format!("missing parameter {path}")))?;
        if p.value.shape() != value.shape() {
            return Err(config_err(format!(
                "parameter {path}: shape {:?} cannot be replaced by {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path).map(|p| &p.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `weight * grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients<T>, weight: T) -> Result<()> {
        for (path, g) in &grads.map {
            let p = self
                .entries
                .get_mut(path)
                .ok_or_else(|| config_err(format!("gradient for unknown parameter {path}")))?;
            for (slot, &v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *slot += weight * v;
            }
        }
        Ok(())
    }

    /// Maps a flat coordinate index onto `(path, offset)` in path order.
    pub fn coordinate(&self, mut index: usize) -> Option<(&str, usize)> {
        for (path, p) in &self.entries {
            if index < p.value.len() {
                return Some((path, index));
            }
            index -= p.value.len();
        }
        None
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Gradient of a scalar loss with respect to every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub(crate) map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.map.get(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }
}
