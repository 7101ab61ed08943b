//! Fixed-shape numerical kernel: 3xC feature grids, channel-mixing maps,
//! column-wise products and norms, deterministic randomness.

pub mod orthogonal;
pub mod prim;
pub mod rng;
pub mod tensor;

use crate::error::{config_err, Result};
use crate::scalar::Scalar;
use prim::Prim;
use rng::Rng;
use tensor::{Mat3, Tensor};

/// Guard used by every norm division in the crate.
pub const NORM_EPS: f64 = 1e-8;

/// One joint's equivariant feature: 3 coordinate rows by C channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoFeature<T>(Tensor<T>);

impl<T: Scalar> GeoFeature<T> {
    pub fn zeros(channels: usize) -> Self {
        Self(Tensor::zeros([1, 3, channels]))
    }

    /// Builds a feature from its channel columns.
    pub fn from_columns(cols: &[[T; 3]]) -> Result<Self> {
        if cols.is_empty() {
            return Err(config_err("feature needs at least one channel"));
        }
        Ok(Self(Tensor::from_fn([1, 3, cols.len()], |_, r, c| cols[c][r])))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        if t.shape()[0] != 1 || t.shape()[1] != 3 || t.shape()[2] == 0 {
            return Err(config_err(format!(
                "feature must have shape [1, 3, C], got {:?}",
                t.shape()
            )));
        }
        Ok(Self(t))
    }

    pub fn random(channels: usize, rng: &mut Rng) -> Self {
        Self(Tensor::from_fn([1, 3, channels], |_, _, _| T::of(rng.normal())))
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }

    pub fn column(&self, c: usize) -> [T; 3] {
        [self.0.get(0, 0, c), self.0.get(0, 1, c), self.0.get(0, 2, c)]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn rotated(&self, m: &Mat3<T>) -> Self {
        Self(self.0.rotated(m).expect("three rows"))
    }
}

/// Centroid of a pose or sequence, in the same units as positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid<T>(pub [T; 3]);

impl<T: Scalar> Centroid<T> {
    /// Reads a `[1, 3, 1]` tensor.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        if t.shape() != [1, 3, 1] {
            return Err(config_err(format!("centroid shape {:?}", t.shape())));
        }
        Ok(Self([t.get(0, 0, 0), t.get(0, 1, 0), t.get(0, 2, 0)]))
    }
}

/// Bias-free channel-mixing map. Acts only on the channel axis, so it commutes
/// with any transform applied to the coordinate axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap<T> {
    weights: Tensor<T>,
}

impl<T: Scalar> LinearMap<T> {
    /// Uniform in `[-1/sqrt(c_in), 1/sqrt(c_in)]`.
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (c_in as f64).sqrt();
        Self {
            weights: Tensor::from_fn([1, c_in, c_out], |_, _, _| T::of(rng.uniform(-bound, bound))),
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            weights: Tensor::from_fn([1, c, c], |_, r, k| if r == k { T::one() } else { T::zero() }),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weights: Tensor::zeros([1, c_in, c_out]),
        }
    }

    pub fn from_tensor(weights: Tensor<T>) -> Result<Self> {
        if weights.items() != 1 {
            return Err(config_err("linear map weights must be a single grid"));
        }
        Ok(Self { weights })
    }

    pub fn c_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn c_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.weights
    }

    /// Rescales each output channel's weight column so it sums to one.
    /// Maps constrained this way carry a common translation through unchanged.
    pub fn project_unit_column_sums(&mut self) {
        project_unit_column_sums(&mut self.weights);
    }
}

pub(crate) fn project_unit_column_sums<T: Scalar>(w: &mut Tensor<T>) {
    let [_, c_in, c_out] = w.shape();
    let n = T::of_usize(c_in);
    for c in 0..c_out {
        let s: T = (0..c_in).map(|r| w.get(0, r, c)).sum();
        let shift = (T::one() - s) / n;
        for r in 0..c_in {
            let v = w.get(0, r, c);
            w.set(0, r, c, v + shift);
        }
    }
}

/// Two-stage MLP over rotation-invariant channel rows:
/// `w2 . tanh(w1 . x + b1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantMlp<T> {
    pub w1: LinearMap<T>,
    pub b1: Tensor<T>,
    pub w2: LinearMap<T>,
}

impl<T: Scalar> InvariantMlp<T> {
    pub fn init(c_in: usize, hidden: usize, c_out: usize, rng: &mut Rng) -> Self {
        Self {
            w1: LinearMap::init(c_in, hidden, rng),
            b1: Tensor::zeros([1, 1, hidden]),
            w2: LinearMap::init(hidden, c_out, rng),
        }
    }

    /// `x: [n, 1, c_in] -> [n, 1, c_out]`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = Prim::MatMul.forward(&[x, self.w1.weights()])?;
        let h = Prim::Add.forward(&[&h, &self.b1])?;
        let h = Prim::Tanh.forward(&[&h])?;
        Prim::MatMul.forward(&[&h, self.w2.weights()])
    }
}

/// Column-wise cross product.
pub fn cross_cols<T: Scalar>(a: &GeoFeature<T>, b: &GeoFeature<T>) -> Result<GeoFeature<T>> {
    Prim::Cross.forward(&[a.tensor(), b.tensor()]).map(GeoFeature)
}

/// Euclidean norm of each channel column.
pub fn col_norm<T: Scalar>(a: &GeoFeature<T>) -> Vec<T> {
    Prim::ColNorm
        .forward(&[a.tensor()])
        .expect("unary")
        .into_data()
}

pub fn apply_linear<T: Scalar>(m: &LinearMap<T>, a: &GeoFeature<T>) -> Result<GeoFeature<T>> {
    if a.channels() != m.c_in() {
        return Err(config_err(format!(
            "linear map expects {} channels, feature has {}",
            m.c_in(),
            a.channels()
        )));
    }
    Prim::MatMul.forward(&[a.tensor(), m.weights()]).map(GeoFeature)
}

/// Divides each row of an `n x n` matrix by `max(|row|, eps)`.
pub fn row_l2_normalize<T: Scalar>(m: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    if eps <= T::zero() {
        return Err(config_err("row normalization needs eps > 0"));
    }
    Prim::RowNormalize(eps).forward(&[m])
}
