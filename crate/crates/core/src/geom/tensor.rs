//! Dense stacks of small grids.
//!
//! A [`Tensor`] has shape `[items, rows, cols]`. A stack of joint features is
//! `[joints, 3, channels]`, a stack of invariant channel rows is
//! `[joints, 1, channels]`, and a linear map is `[1, c_in, c_out]`. Data is
//! stored row-major with the item index outermost.

use crate::error::{config_err, Result};
use crate::scalar::Scalar;

pub type Shape = [usize; 3];

/// 3x3 matrix stored row-major, used for rotations and reflections.
pub type Mat3<T> = [[T; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::filled([1, 1, 1], value)
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let expected = shape[0] * shape[1] * shape[2];
        if data.len() != expected {
            return Err(config_err(format!(
                "tensor of shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
        for i in 0..shape[0] {
            for r in 0..shape[1] {
                for c in 0..shape[2] {
                    data.push(f(i, r, c));
                }
            }
        }
        Self { shape, data }
    }

    /// Builds a `[1, rows, cols]` tensor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(config_err("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec([1, rows.len(), cols], data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn items(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, r: usize, c: usize) -> usize {
        (i * self.shape[1] + r) * self.shape[2] + c
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize, c: usize) -> T {
        self.data[self.offset(i, r, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, r: usize, c: usize, v: T) {
        let o = self.offset(i, r, c);
        self.data[o] = v;
    }

    /// Slice holding item `i` (rows x cols entries).
    pub fn item(&self, i: usize) -> &[T] {
        let n = self.shape[1] * self.shape[2];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_tensor(&self, i: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2]],
            data: self.item(i).to_vec(),
        }
    }

    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape[0] * shape[1] * shape[2] != self.data.len() {
            return Err(config_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(config_err(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign_tensor(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    /// Applies `m` to the 3-axis of every item: `out_i = m * x_i`.
    pub fn rotated(&self, m: &Mat3<T>) -> Result<Self> {
        if self.shape[1] != 3 {
            return Err(config_err(format!(
                "rotation needs 3 rows, tensor has shape {:?}",
                self.shape
            )));
        }
        let mut out = Self::zeros(self.shape);
        for i in 0..self.shape[0] {
            for c in 0..self.shape[2] {
                let v = [self.get(i, 0, c), self.get(i, 1, c), self.get(i, 2, c)];
                for (r, row) in m.iter().enumerate() {
                    out.set(i, r, c, row[0] * v[0] + row[1] * v[1] + row[2] * v[2]);
                }
            }
        }
        Ok(out)
    }

    /// Adds the 3-vector `t` to every column of every item.
    pub fn translated(&self, t: [T; 3]) -> Result<Self> {
        if self.shape[1] != 3 {
            return Err(config_err(format!(
                "translation needs 3 rows, tensor has shape {:?}",
                self.shape
            )));
        }
        Ok(Self::from_fn(self.shape, |i, r, c| self.get(i, r, c) + t[r]))
    }
}
