use std::sync::Arc;

use crate::error::Result;
use crate::geom::prim::Prim;
use crate::geom::tensor::{Shape, Tensor};
use crate::scalar::Scalar;

/// Evaluation strategy for a composition of [`Prim`]s.
///
/// Network code is written once against this trait. [`super::Eager`] computes
/// values directly; [`super::Tape`] also records each application so a
/// backward sweep can produce parameter gradients.
pub trait Backend<T: Scalar> {
    type Var: Clone;

    fn constant(&mut self, value: Tensor<T>) -> Self::Var;

    /// Leaf for a learnable parameter. Repeated calls with the same path
    /// return the same leaf.
    fn param(&mut self, path: &str) -> Result<Self::Var>;

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn apply(&mut self, prim: Prim<T>, inputs: &[&Self::Var]) -> Result<Self::Var>;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Mul, &[a, b])
    }

    fn scale(&mut self, a: &Self::Var, s: T) -> Result<Self::Var> {
        self.apply(Prim::Scale(s), &[a])
    }

    fn matmul(&mut self, a: &Self::Var, w: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::MatMul, &[a, w])
    }

    fn gather(&mut self, a: &Self::Var, idx: &Arc<[usize]>) -> Result<Self::Var> {
        self.apply(Prim::Gather(idx.clone()), &[a])
    }

    fn scatter_add(&mut self, a: &Self::Var, idx: &Arc<[usize]>, n_out: usize) -> Result<Self::Var> {
        self.apply(
            Prim::ScatterAdd {
                idx: idx.clone(),
                n_out,
            },
            &[a],
        )
    }

    fn col_norm(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::ColNorm, &[a])
    }

    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Tanh, &[a])
    }

    fn sigmoid(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Sigmoid, &[a])
    }

    fn abs(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Abs, &[a])
    }

    fn recip_guarded(&mut self, a: &Self::Var, eps: T) -> Result<Self::Var> {
        self.apply(Prim::RecipGuarded(eps), &[a])
    }

    fn cross(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::Cross, &[a, b])
    }

    fn gram(&mut self, q: &Self::Var, k: &Self::Var, vars: usize) -> Result<Self::Var> {
        self.apply(Prim::Gram { vars }, &[q, k])
    }

    fn row_normalize(&mut self, a: &Self::Var, eps: T) -> Result<Self::Var> {
        self.apply(Prim::RowNormalize(eps), &[a])
    }

    fn mix_vars(&mut self, v: &Self::Var, m: &Self::Var, vars: usize) -> Result<Self::Var> {
        self.apply(Prim::MixVars { vars }, &[v, m])
    }

    fn vars_to_channels(&mut self, x: &Self::Var, vars: usize) -> Result<Self::Var> {
        self.apply(Prim::VarsToChannels { vars }, &[x])
    }

    fn concat_rows(&mut self, parts: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Prim::ConcatRows, parts)
    }

    fn mean_axes(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::MeanAxes, &[a])
    }

    fn sum_all(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(Prim::SumAll, &[a])
    }

    fn reshape(&mut self, a: &Self::Var, shape: Shape) -> Result<Self::Var> {
        self.apply(Prim::Reshape(shape), &[a])
    }

    fn shape(&self, v: &Self::Var) -> Shape {
        self.value(v).shape()
    }
}
