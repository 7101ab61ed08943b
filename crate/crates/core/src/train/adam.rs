//! Adam with bias correction over a `ParamStore`'s accumulated gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::geom::tensor::Tensor;
use crate::model::project_constraints;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(p, v)| (p.to_string(), Tensor::zeros(v.value.shape())))
                .collect()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on `params`, then
    /// re-projects constrained parameters.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::one() - T::of(cfg.beta1.powi(t));
        let c2 = T::one() - T::of(cfg.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(cfg.eps));
        for (path, p) in params.iter_mut() {
            let m = self.first.get_mut(path).expect("moment per parameter");
            let v = self.second.get_mut(path).expect("moment per parameter");
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let mi = b1 * m.data()[i] + (T::one() - b1) * g[i];
                let vi = b2 * v.data()[i] + (T::one() - b2) * g[i] * g[i];
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                *w = *w - lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
        project_constraints(params);
    }
}
