//! Randomized equivariance harness for a whole model.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::orthogonal::OrthogonalParams;
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::model::GgMotion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub trials: usize,
    /// Bound on the deviation relative to the output magnitude.
    pub tol: f64,
    pub seed: u64,
    /// Use the identity for every orthogonal part.
    pub translation_only: bool,
    /// Translations are drawn from `[-range, range]` mm per axis.
    pub translation_range: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            tol: 1e-9,
            seed: 0,
            translation_only: false,
            translation_range: 1000.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub reflection: bool,
    pub translation: [f64; 3],
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub trials: usize,
    pub reflections: usize,
    pub tol: f64,
    pub max_deviation: f64,
    pub worst: TrialResult,
    pub passed: bool,
    pub elapsed_ms: f64,
}

/// A random past window in millimeters, `[N, 3, T_h]`.
pub fn random_input(model: &GgMotion<f64>, rng: &mut Rng) -> Tensor<f64> {
    let shape = [model.topology().n_joints(), 3, model.config().t_h];
    Tensor::from_fn(shape, |_, _, _| rng.uniform(-1000.0, 1000.0))
}

/// Compares `F(R X + t)` with `R F(X) + t` over `cfg.trials` transforms.
/// Odd trials are reflections, so at least half the orthogonal parts have
/// determinant -1. Deviations are max-abs errors divided by `max |F(X)|`.
pub fn check_equivariance(model: &GgMotion<f64>, input: &Tensor<f64>, cfg: &CheckConfig) -> Result<EquivarianceReport> {
    if cfg.trials == 0 {
        return Err(Error::Usage("trials must be positive".into()));
    }
    let started = Instant::now();
    let base = model.predict(input)?;
    let scale = base.max_abs().max(f64::MIN_POSITIVE);
    let root = Rng::new(cfg.seed).split("equivariance");
    let results: Vec<Result<TrialResult>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = root.split(&format!("trial.{trial}"));
            let mut op = OrthogonalParams::sample(&mut rng);
            op.reflect = trial % 2 == 1;
            if cfg.translation_only {
                op = OrthogonalParams::IDENTITY;
            }
            let m = op.matrix::<f64>();
            let r = cfg.translation_range;
            let t = [0, 1, 2].map(|_| rng.uniform(-r, r));
            let moved = model.predict(&input.rotated(&m)?.translated(t)?)?;
            let expected = base.rotated(&m)?.translated(t)?;
            Ok(TrialResult {
                trial,
                reflection: op.reflect,
                translation: t,
                deviation: moved.max_abs_diff(&expected) / scale,
            })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let worst = results
        .iter()
        .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
        .cloned()
        .expect("at least one trial");
    Ok(EquivarianceReport {
        trials: cfg.trials,
        reflections: results.iter().filter(|r| r.reflection).count(),
        tol: cfg.tol,
        max_deviation: worst.deviation,
        passed: worst.deviation <= cfg.tol,
        worst,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::topology::SkeletonTopology;

    fn model(bias: f64) -> GgMotion<f64> {
        let mut cfg = ModelConfig {
            t_h: 4,
            t_f: 3,
            channels: 4,
            hidden: 6,
            blocks: 2,
            seed: 5,
            ..Default::default()
        };
        cfg.variant.fault_axis_bias = bias;
        GgMotion::new(cfg, SkeletonTopology::chain_grouped(6, 2).unwrap()).unwrap()
    }

    #[test]
    fn fresh_model_passes_with_reflections() {
        let m = model(0.0);
        let x = random_input(&m, &mut Rng::new(1));
        let cfg = CheckConfig {
            trials: 20,
            ..Default::default()
        };
        let r = check_equivariance(&m, &x, &cfg).unwrap();
        assert!(r.passed, "{}", r.max_deviation);
        assert_eq!(r.reflections, 10);
    }

    #[test]
    fn injected_axis_bias_fails_rotation_but_not_translation() {
        let m = model(0.5);
        let x = random_input(&m, &mut Rng::new(2));
        let cfg = CheckConfig {
            trials: 10,
            ..Default::default()
        };
        let r = check_equivariance(&m, &x, &cfg).unwrap();
        assert!(!r.passed);
        assert!(r.max_deviation > 1e3 * cfg.tol);
        let t_only = CheckConfig {
            translation_only: true,
            tol: 1e-10,
            ..cfg
        };
        let r = check_equivariance(&m, &x, &t_only).unwrap();
        assert!(r.passed, "{}", r.max_deviation);
        assert_eq!(r.reflections, 0);
    }

    #[test]
    fn reports_are_deterministic() {
        let m = model(0.0);
        let x = random_input(&m, &mut Rng::new(3));
        let cfg = CheckConfig {
            trials: 6,
            ..Default::default()
        };
        let a = check_equivariance(&m, &x, &cfg).unwrap();
        let b = check_equivariance(&m, &x, &cfg).unwrap();
        assert_eq!(a.max_deviation, b.max_deviation);
        assert_eq!(a.worst.trial, b.worst.trial);
    }
}
