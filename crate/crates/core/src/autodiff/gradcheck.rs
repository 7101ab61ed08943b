//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use crate::autodiff::backend::Backend;
use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{Eager, Tape};
use crate::error::{Error, Result};
use crate::geom::rng::Rng;
use crate::scalar::Scalar;

/// A scalar-valued composition that can run on any backend.
pub trait Program<T: Scalar> {
    fn run<B: Backend<T>>(&self, b: &mut B) -> Result<B::Var>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub n_coords: usize,
    /// Central-difference step.
    pub step: f64,
    pub rel_tol: f64,
    /// Errors below this are accepted regardless of magnitude.
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_coords: 200,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradSample {
    pub path: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    /// `abs_error / max(|analytic|, |numeric|, abs_tol / rel_tol)`.
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    pub worst_path: String,
    pub worst_offset: usize,
    pub rel_tol: f64,
    pub passed: bool,
}

fn eval<T: Scalar, P: Program<T>>(program: &P, params: &ParamStore<T>) -> Result<f64> {
    let mut eager = Eager::new(params);
    let out = program.run(&mut eager)?;
    let v = eager.value(&out);
    if v.shape() != [1, 1, 1] {
        return Err(Error::Usage(format!("program output has shape {:?}", v.shape())));
    }
    Ok(v.get(0, 0, 0).as_f64())
}

/// Samples `cfg.n_coords` parameter coordinates uniformly and compares the
/// tape gradient against `(L(p + h) - L(p - h)) / 2h` at each.
pub fn grad_check<T: Scalar, P: Program<T>>(
    program: &P,
    params: &ParamStore<T>,
    rng: &mut Rng,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    if cfg.n_coords == 0 {
        return Err(Error::Usage("grad_check needs at least one coordinate".into()));
    }
    let total = params.scalar_count();
    if total == 0 {
        return Err(Error::Usage("grad_check on an empty parameter store".into()));
    }
    let grads = {
        let mut tape = Tape::new(params);
        let loss = program.run(&mut tape)?;
        tape.backward(loss)?
    };
    let floor = cfg.abs_tol / cfg.rel_tol;
    let mut perturbed = params.clone();
    let mut samples = Vec::with_capacity(cfg.n_coords);
    for _ in 0..cfg.n_coords {
        let (path, offset) = params.coordinate(rng.below(total)).expect("index in range");
        let path = path.to_string();
        let original = params.get(&path).expect("present").data()[offset];
        let h = T::of(cfg.step);
        perturbed.value_mut(&path).expect("present").data_mut()[offset] = original + h;
        let plus = eval(program, &perturbed)?;
        perturbed.value_mut(&path).expect("present").data_mut()[offset] = original - h;
        let minus = eval(program, &perturbed)?;
        perturbed.value_mut(&path).expect("present").data_mut()[offset] = original;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grads.get(&path).expect("every path").data()[offset].as_f64();
        let abs_error = (analytic - numeric).abs();
        let rel_error = abs_error / analytic.abs().max(numeric.abs()).max(floor);
        samples.push(GradSample {
            path,
            offset,
            analytic,
            numeric,
            abs_error,
            rel_error,
        });
    }
    let worst = samples
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .expect("non-empty");
    Ok(GradCheckReport {
        max_rel_error: worst.rel_error,
        worst_path: worst.path.clone(),
        worst_offset: worst.offset,
        rel_tol: cfg.rel_tol,
        passed: worst.rel_error <= cfg.rel_tol,
        samples,
    })
}
