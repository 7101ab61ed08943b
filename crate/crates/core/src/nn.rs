//! Parameter-path plumbing shared by the network modules.

use crate::autodiff::{Backend, ParamStore};
use crate::error::Result;
use crate::geom::{InvariantMlp, LinearMap};
use crate::scalar::Scalar;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn register_linear<T: Scalar>(store: &mut ParamStore<T>, path: &str, m: &LinearMap<T>) -> Result<()> {
    store.insert(path, m.weights().clone())
}

pub(crate) fn register_mlp<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, m: &InvariantMlp<T>) -> Result<()> {
    store.insert(join(prefix, "w1"), m.w1.weights().clone())?;
    store.insert(join(prefix, "b1"), m.b1.clone())?;
    store.insert(join(prefix, "w2"), m.w2.weights().clone())
}

/// Scalar count of an `InvariantMlp` with the given stage widths.
pub(crate) fn mlp_size(c_in: usize, hidden: usize, c_out: usize) -> usize {
    c_in * hidden + hidden + hidden * c_out
}

pub(crate) fn linear<T: Scalar, B: Backend<T>>(b: &mut B, path: &str, x: &B::Var) -> Result<B::Var> {
    let w = b.param(path)?;
    b.matmul(x, &w)
}

/// `w2 . tanh(w1 . x + b1)` on `[n, 1, c_in]` rows.
pub(crate) fn mlp<T: Scalar, B: Backend<T>>(b: &mut B, prefix: &str, x: &B::Var) -> Result<B::Var> {
    let h = linear(b, &join(prefix, "w1"), x)?;
    let bias = b.param(&join(prefix, "b1"))?;
    let h = b.add(&h, &bias)?;
    let h = b.tanh(&h)?;
    linear(b, &join(prefix, "w2"), &h)
}
