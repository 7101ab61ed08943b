//! Mini-batch training: objective, optimizer loop and evaluation.

pub mod adam;
pub mod losses;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Gradients, Program, Tape};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::model::GgMotion;
use crate::scalar::Scalar;

pub use adam::{AdamConfig, AdamState};
pub use losses::{bone_length_drift, loss_aux, loss_aux_apply, loss_pos, loss_pos_apply, mpjpe, mpjpe_per_frame, AuxMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub aux: AuxMode,
    pub aux_weight: f64,
    /// Stops after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
    /// Seeds the per-epoch batch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr: 3e-4,
            lr_decay: 0.88,
            adam: AdamConfig::default(),
            aux: AuxMode::Literal,
            aux_weight: 1.0,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Validation("lr must be positive".into()));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Validation("lr_decay must be positive".into()));
        }
        if !(self.aux_weight.is_finite() && self.aux_weight >= 0.0) {
            return Err(Error::Validation("aux_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (zero-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// Per-epoch means over all optimizer steps taken in that epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub loss_pos: f64,
    pub loss_aux: f64,
    /// Millimeters; absent without validation windows.
    pub val_mpjpe: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Network-scale `(past, future)` pairs.
pub type ScaledPair<T> = (Tensor<T>, Tensor<T>);

pub fn scale_windows<T: Scalar>(windows: &[Window], input_scale: f64) -> Vec<ScaledPair<T>> {
    let s = T::of(input_scale);
    windows
        .iter()
        .map(|w| (w.past.cast::<T>().scaled(s), w.future.cast::<T>().scaled(s)))
        .collect()
}

/// Returns `(total, position, auxiliary)` for one window.
pub fn objective_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    model: &GgMotion<T>,
    past: &Tensor<T>,
    future: &Tensor<T>,
    aux: AuxMode,
    aux_weight: f64,
) -> Result<(B::Var, B::Var, B::Var)> {
    let pred = model.forward_on(b, past)?;
    let truth = b.constant(future.clone());
    let pos = loss_pos_apply(b, &pred, &truth)?;
    let aux_term = loss_aux_apply(b, aux, &model.plan, &pred, &truth)?;
    let weighted = b.scale(&aux_term, T::of(aux_weight))?;
    let total = b.add(&pos, &weighted)?;
    Ok((total, pos, aux_term))
}

/// Mean objective over a fixed set of windows, for gradient checking.
pub struct Objective<'a, T> {
    pub model: &'a GgMotion<T>,
    pub items: Vec<ScaledPair<T>>,
    pub aux: AuxMode,
    pub aux_weight: f64,
}

impl<T: Scalar> Program<T> for Objective<'_, T> {
    fn run<B: Backend<T>>(&self, b: &mut B) -> Result<B::Var> {
        if self.items.is_empty() {
            return Err(Error::Usage("objective needs at least one window".into()));
        }
        let mut acc: Option<B::Var> = None;
        for (past, future) in &self.items {
            let (total, _, _) = objective_apply(b, self.model, past, future, self.aux, self.aux_weight)?;
            acc = Some(match acc {
                None => total,
                Some(a) => b.add(&a, &total)?,
            });
        }
        let sum = acc.expect("non-empty");
        b.scale(&sum, T::one() / T::of_usize(self.items.len()))
    }
}

struct ItemGrad<T> {
    grads: Gradients<T>,
    loss: f64,
    pos: f64,
    aux: f64,
}

fn item_grad<T: Scalar>(model: &GgMotion<T>, pair: &ScaledPair<T>, cfg: &TrainConfig) -> Result<ItemGrad<T>> {
    let mut tape = Tape::new(&model.params);
    let (total, pos, aux) = objective_apply(&mut tape, model, &pair.0, &pair.1, cfg.aux, cfg.aux_weight)?;
    let read = |v| tape.value(v).get(0, 0, 0).as_f64();
    let (loss, pos, aux) = (read(&total), read(&pos), read(&aux));
    let grads = tape.backward(total)?;
    Ok(ItemGrad { grads, loss, pos, aux })
}

/// Trains in place. Each batch item is differentiated on its own tape in
/// parallel, and gradients are summed in batch order so the result does
/// not depend on the thread count. `on_epoch` sees every record as it is
/// produced.
pub fn train<T: Scalar>(
    model: &mut GgMotion<T>,
    cfg: &TrainConfig,
    train_windows: &[Window],
    val_windows: &[Window],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let data = scale_windows::<T>(train_windows, model.config().input_scale);
    let mut shuffle = Rng::new(cfg.seed).split("batches");
    let mut opt = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..cfg.epochs {
        if steps >= budget {
            break;
        }
        let lr = cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle.shuffle(&mut order);
        let (mut pos_sum, mut aux_sum, mut epoch_steps) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if steps >= budget {
                break;
            }
            let results: Vec<Result<ItemGrad<T>>> = {
                let m: &GgMotion<T> = model;
                batch.par_iter().map(|&i| item_grad(m, &data[i], cfg)).collect()
            };
            model.params.zero_grads();
            let w = T::one() / T::of_usize(batch.len());
            let (mut bp, mut ba) = (0.0, 0.0);
            for r in results {
                let g = r?;
                if !g.loss.is_finite() || !g.grads.is_finite() {
                    return Err(Error::Numerical {
                        step: steps,
                        message: format!("non-finite loss {} or gradient", g.loss),
                    });
                }
                model.params.accumulate(&g.grads, w)?;
                bp += g.pos;
                ba += g.aux;
            }
            opt.step(&mut model.params, lr, &cfg.adam);
            if !model.params.all_finite() {
                return Err(Error::Numerical {
                    step: steps,
                    message: "parameters became non-finite".into(),
                });
            }
            pos_sum += bp / batch.len() as f64;
            aux_sum += ba / batch.len() as f64;
            epoch_steps += 1;
            steps += 1;
        }
        let val_mpjpe = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_mpjpe(model, val_windows)?)
        };
        let record = EpochRecord {
            epoch,
            steps: epoch_steps,
            loss_pos: pos_sum / epoch_steps.max(1) as f64,
            loss_aux: aux_sum / epoch_steps.max(1) as f64,
            val_mpjpe,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss_pos {:.6} loss_aux {:.6} lr {lr:.3e}",
            record.loss_pos,
            record.loss_aux
        );
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainReport { history, steps })
}

/// Predictions for every window, millimeters.
pub fn predict_windows<T: Scalar>(model: &GgMotion<T>, windows: &[Window]) -> Result<Vec<Tensor<f64>>> {
    windows
        .par_iter()
        .map(|w| model.predict(&w.past.cast::<T>()).map(|p| p.cast::<f64>()))
        .collect()
}

/// Mean MPJPE over windows, millimeters.
pub fn evaluate_mpjpe<T: Scalar>(model: &GgMotion<T>, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Usage("no windows to evaluate".into()));
    }
    let preds = predict_windows(model, windows)?;
    let mut total = 0.0;
    for (p, w) in preds.iter().zip(windows) {
        total += mpjpe(p, &w.future)?;
    }
    Ok(total / windows.len() as f64)
}

/// Per-future-frame MPJPE averaged over windows, millimeters.
pub fn evaluate_per_frame<T: Scalar>(model: &GgMotion<T>, windows: &[Window]) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::Usage("no windows to evaluate".into()));
    }
    let preds = predict_windows(model, windows)?;
    let mut acc = vec![0.0; model.config().t_f];
    for (p, w) in preds.iter().zip(windows) {
        for (a, e) in acc.iter_mut().zip(mpjpe_per_frame(p, &w.future)?) {
            *a += e;
        }
    }
    Ok(acc.into_iter().map(|a| a / windows.len() as f64).collect())
}

/// Mean bone-length drift over windows, millimeters.
pub fn evaluate_bone_drift<T: Scalar>(model: &GgMotion<T>, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Usage("no windows to evaluate".into()));
    }
    let preds = predict_windows(model, windows)?;
    let mut total = 0.0;
    for (p, w) in preds.iter().zip(windows) {
        total += bone_length_drift(p, &w.future, model.topology())?;
    }
    Ok(total / windows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::data::{synth_generate, windows, SynthConfig};
    use crate::model::ModelConfig;
    use crate::topology::SkeletonTopology;

    fn setup() -> (GgMotion<f64>, Vec<Window>) {
        let topo = SkeletonTopology::chain_grouped(4, 2).unwrap();
        let seq = synth_generate(&SynthConfig {
            topology: topo.clone(),
            frames: 30,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            t_h: 4,
            t_f: 3,
            channels: 4,
            hidden: 6,
            blocks: 1,
            seed: 1,
            ..Default::default()
        };
        (GgMotion::new(cfg, topo).unwrap(), windows(&seq, 4, 3, 2).unwrap())
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            lr: 3e-3,
            ..Default::default()
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        for k in 0..10 {
            assert_eq!(cfg.lr_at_epoch(k), 3e-4 * 0.88f64.powi(k as i32));
        }
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        let (mut m, _) = setup();
        assert!(matches!(train(&mut m, &quick(1), &[], &[], |_| {}), Err(Error::Usage(_))));
    }

    #[test]
    fn training_reduces_loss_and_reports_each_epoch() {
        let (mut m, ws) = setup();
        let before = evaluate_mpjpe(&m, &ws).unwrap();
        let mut seen = 0;
        let report = train(&mut m, &quick(15), &ws, &ws[..2], |_| seen += 1).unwrap();
        assert_eq!(seen, 15);
        assert_eq!(report.history.len(), 15);
        assert!(report.history.iter().all(|r| r.val_mpjpe.is_some()));
        assert!(evaluate_mpjpe(&m, &ws).unwrap() < before);
        let col_sums_ok = m
            .params
            .iter()
            .filter(|(p, _)| p.ends_with("group.phi_c"))
            .all(|(_, p)| (0..p.value.cols()).all(|c| ((0..p.value.rows()).map(|r| p.value.get(0, r, c)).sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(col_sums_ok);
    }

    #[test]
    fn max_steps_caps_updates() {
        let (mut m, ws) = setup();
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..quick(10)
        };
        let report = train(&mut m, &cfg, &ws, &[], |_| {}).unwrap();
        assert_eq!(report.steps, 3);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let run = |threads| {
            let (mut m, ws) = setup();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let h = pool.install(|| train(&mut m, &quick(3), &ws, &ws, |_| {}).unwrap()).history;
            (h, m.params)
        };
        let (h1, p1) = run(1);
        let (h4, p4) = run(4);
        assert_eq!(h1, h4);
        assert_eq!(p1, p4);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (m, ws) = setup();
        let program = Objective {
            model: &m,
            items: scale_windows(&ws[..2], m.config().input_scale),
            aux: AuxMode::BoneLength,
            aux_weight: 0.5,
        };
        let cfg = GradCheckConfig {
            n_coords: 40,
            ..Default::default()
        };
        let report = grad_check(&program, &m.params, &mut Rng::new(3), cfg).unwrap();
        assert!(report.passed, "{} at {}", report.max_rel_error, report.worst_path);
    }

    #[test]
    fn non_finite_data_aborts_with_step() {
        let (mut m, mut ws) = setup();
        ws[0].future.set(0, 0, 0, f64::INFINITY);
        let cfg = TrainConfig {
            batch_size: 100,
            ..quick(1)
        };
        assert!(matches!(train(&mut m, &cfg, &ws, &[], |_| {}), Err(Error::Numerical { step: 0, .. })));
    }
}
