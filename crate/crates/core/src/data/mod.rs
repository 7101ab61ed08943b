//! Motion sequences, windowing and dataset splits.

pub mod format;
pub mod synth;

use crate::error::{Error, Result};
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;

pub use format::{load_json_fixture, load_sequence, read_ggs1, save_json_fixture, save_sequence, write_ggs1};
pub use synth::{synth_generate, SynthConfig};

/// Joint positions over time, millimeters. Stored as `[N, 3, T]`: one
/// `3 x T` grid per joint with frames along the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    positions: Tensor<f64>,
}

impl MotionSequence {
    pub fn new(fps: f64, positions: Tensor<f64>) -> Result<Self> {
        let [n, rows, t] = positions.shape();
        if rows != 3 {
            return Err(Error::Validation(format!("positions need 3 coordinate rows, got {rows}")));
        }
        if n == 0 || t == 0 {
            return Err(Error::Validation("sequence needs at least one joint and one frame".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Validation(format!("frame rate must be positive, got {fps}")));
        }
        if !positions.is_finite() {
            return Err(Error::Validation("positions contain non-finite values".into()));
        }
        Ok(Self { fps, positions })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn n_joints(&self) -> usize {
        self.positions.items()
    }

    pub fn n_frames(&self) -> usize {
        self.positions.cols()
    }

    pub fn positions(&self) -> &Tensor<f64> {
        &self.positions
    }

    pub fn position(&self, joint: usize, frame: usize) -> [f64; 3] {
        [0, 1, 2].map(|d| self.positions.get(joint, d, frame))
    }

    /// Frames `start..start + len` as `[N, 3, len]`.
    pub fn frames(&self, start: usize, len: usize) -> Result<Tensor<f64>> {
        if start + len > self.n_frames() {
            return Err(Error::Usage(format!(
                "frames {start}..{} exceed sequence length {}",
                start + len,
                self.n_frames()
            )));
        }
        Ok(Tensor::from_fn([self.n_joints(), 3, len], |j, d, t| {
            self.positions.get(j, d, start + t)
        }))
    }
}

/// One training example: `t_h` observed frames and the `t_f` that follow.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub past: Tensor<f64>,
    pub future: Tensor<f64>,
}

/// Sliding windows at `stride`; there are `(T - t_h - t_f) / stride + 1` of them.
pub fn windows(seq: &MotionSequence, t_h: usize, t_f: usize, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 || t_h == 0 || t_f == 0 {
        return Err(Error::Usage("t_h, t_f and stride must be positive".into()));
    }
    let need = t_h + t_f;
    if need > seq.n_frames() {
        return Err(Error::Usage(format!(
            "sequence of {} frames is shorter than a {need}-frame window",
            seq.n_frames()
        )));
    }
    let count = (seq.n_frames() - need) / stride + 1;
    (0..count)
        .map(|k| {
            let start = k * stride;
            Ok(Window {
                start,
                past: seq.frames(start, t_h)?,
                future: seq.frames(start + t_h, t_f)?,
            })
        })
        .collect()
}

/// Seeded 80/10/10 split by window index.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

pub fn split_windows(all: Vec<Window>, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..all.len()).collect();
    Rng::new(seed).split("split").shuffle(&mut idx);
    let n = all.len();
    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    let mut slots: Vec<Option<Window>> = all.into_iter().map(Some).collect();
    let mut take = |range: &[usize]| -> Vec<Window> { range.iter().map(|&i| slots[i].take().expect("once")).collect() };
    let train = take(&idx[..n_train]);
    let val = take(&idx[n_train..n_train + n_val]);
    let test = take(&idx[n_train + n_val..]);
    Split { train, val, test }
}
