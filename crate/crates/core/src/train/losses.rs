//! Position and auxiliary losses, MPJPE and bone-length drift.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, ParamStore};
use crate::error::{config_err, Result};
use crate::geom::tensor::Tensor;
use crate::scalar::Scalar;
use crate::topology::{IndexPlan, SkeletonTopology};

/// Which auxiliary term accompanies the position loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// Mean L1 distance from each predicted child to its ground-truth parent.
    #[default]
    Literal,
    /// Mean absolute difference between predicted and true bone lengths.
    BoneLength,
    Off,
}

fn check_pair(pred: [usize; 3], truth: [usize; 3]) -> Result<()> {
    if pred != truth || pred[1] != 3 {
        return Err(config_err(format!("prediction {pred:?} and truth {truth:?} must both be [N, 3, T]")));
    }
    Ok(())
}

/// Mean over joints and frames of the Euclidean error: `[N, 3, T]` pairs.
pub fn loss_pos_apply<T: Scalar, B: Backend<T>>(b: &mut B, pred: &B::Var, truth: &B::Var) -> Result<B::Var> {
    let [n, _, t] = b.shape(pred);
    let d = b.sub(pred, truth)?;
    let e = b.col_norm(&d)?;
    let s = b.sum_all(&e)?;
    b.scale(&s, T::one() / T::of_usize(n * t))
}

pub fn loss_aux_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    mode: AuxMode,
    plan: &IndexPlan,
    pred: &B::Var,
    truth: &B::Var,
) -> Result<B::Var> {
    let [_, _, t] = b.shape(pred);
    let bones = plan.bone_child.len();
    if mode == AuxMode::Off || bones == 0 {
        return Ok(b.constant(Tensor::scalar(T::zero())));
    }
    let norm = T::one() / T::of_usize(bones * t);
    match mode {
        AuxMode::Literal => {
            let child = b.gather(pred, &plan.bone_child)?;
            let parent = b.gather(truth, &plan.bone_parent)?;
            let d = b.sub(&child, &parent)?;
            let a = b.abs(&d)?;
            let s = b.sum_all(&a)?;
            b.scale(&s, norm)
        }
        AuxMode::BoneLength => {
            let pc = b.gather(pred, &plan.bone_child)?;
            let pp = b.gather(pred, &plan.bone_parent)?;
            let tc = b.gather(truth, &plan.bone_child)?;
            let tp = b.gather(truth, &plan.bone_parent)?;
            let pd = b.sub(&pc, &pp)?;
            let td = b.sub(&tc, &tp)?;
            let pl = b.col_norm(&pd)?;
            let tl = b.col_norm(&td)?;
            let d = b.sub(&pl, &tl)?;
            let a = b.abs(&d)?;
            let s = b.sum_all(&a)?;
            b.scale(&s, norm)
        }
        AuxMode::Off => unreachable!("handled above"),
    }
}

fn eval_scalar<T: Scalar>(
    f: impl FnOnce(&mut Eager<'_, T>, &Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
    pred: &Tensor<T>,
    truth: &Tensor<T>,
) -> Result<f64> {
    check_pair(pred.shape(), truth.shape())?;
    let store = ParamStore::new();
    let mut e = Eager::new(&store);
    Ok(f(&mut e, pred, truth)?.get(0, 0, 0).as_f64())
}

pub fn loss_pos<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    eval_scalar(|e, p, t| loss_pos_apply(e, p, t), pred, truth)
}

/// Literal auxiliary loss.
pub fn loss_aux<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, topo: &SkeletonTopology) -> Result<f64> {
    loss_aux_mode(pred, truth, topo, AuxMode::Literal)
}

pub fn loss_aux_mode<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, topo: &SkeletonTopology, mode: AuxMode) -> Result<f64> {
    if pred.items() != topo.n_joints() {
        return Err(config_err("loss_aux: joint count differs from topology"));
    }
    let plan = IndexPlan::new(topo);
    eval_scalar(|e, p, t| loss_aux_apply(e, mode, &plan, p, t), pred, truth)
}

/// Mean per-joint position error of millimeter sequences, in millimeters.
pub fn mpjpe<T: Scalar>(pred_mm: &Tensor<T>, truth_mm: &Tensor<T>) -> Result<f64> {
    loss_pos(pred_mm, truth_mm)
}

/// MPJPE of each future frame separately.
pub fn mpjpe_per_frame(pred_mm: &Tensor<f64>, truth_mm: &Tensor<f64>) -> Result<Vec<f64>> {
    check_pair(pred_mm.shape(), truth_mm.shape())?;
    let [n, _, t] = pred_mm.shape();
    Ok((0..t)
        .map(|f| {
            (0..n)
                .map(|j| {
                    (0..3)
                        .map(|d| (pred_mm.get(j, d, f) - truth_mm.get(j, d, f)).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Mean absolute deviation of predicted bone lengths from the true ones.
pub fn bone_length_drift(pred_mm: &Tensor<f64>, truth_mm: &Tensor<f64>, topo: &SkeletonTopology) -> Result<f64> {
    loss_aux_mode(pred_mm, truth_mm, topo, AuxMode::BoneLength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rng::Rng;

    fn rand_seq(n: usize, t: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn([n, 3, t], |_, _, _| rng.uniform(-100.0, 100.0))
    }

    #[test]
    fn identical_sequences_have_zero_loss() {
        let mut rng = Rng::new(1);
        let y = rand_seq(5, 4, &mut rng);
        assert_eq!(loss_pos(&y, &y).unwrap(), 0.0);
        assert_eq!(mpjpe(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn single_offset_joint() {
        let mut rng = Rng::new(2);
        let y = rand_seq(6, 5, &mut rng);
        let mut p = y.clone();
        for f in 0..5 {
            p.set(2, 0, f, y.get(2, 0, f) + 3.0);
        }
        assert!((loss_pos(&p, &y).unwrap() - 3.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn uniform_three_four_five_error() {
        let mut rng = Rng::new(3);
        let y = rand_seq(4, 3, &mut rng);
        let p = Tensor::from_fn([4, 3, 3], |j, d, f| y.get(j, d, f) + [0.0, 3.0, 4.0][d]);
        assert_eq!(mpjpe(&p, &y).unwrap(), 5.0);
        assert!(mpjpe_per_frame(&p, &y).unwrap().iter().all(|&e| e == 5.0));
    }

    #[test]
    fn symmetric_under_joint_permutation() {
        let mut rng = Rng::new(4);
        let (p, y) = (rand_seq(7, 3, &mut rng), rand_seq(7, 3, &mut rng));
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let permute = |x: &Tensor<f64>| Tensor::from_fn([7, 3, 3], |j, d, f| x.get(perm[j], d, f));
        let a = loss_pos(&p, &y).unwrap();
        let b = loss_pos(&permute(&p), &permute(&y)).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn literal_aux_on_two_joint_chain() {
        let topo = SkeletonTopology::chain(2, vec![vec![0, 1]]).unwrap();
        let y = Tensor::from_fn([2, 3, 4], |j, _, f| f as f64 + j as f64);
        assert_eq!(loss_aux(&y, &y, &topo).unwrap(), 3.0);
    }

    #[test]
    fn single_joint_aux_is_zero() {
        let topo = SkeletonTopology::chain(1, vec![vec![0]]).unwrap();
        let y = Tensor::from_fn([1, 3, 2], |_, d, f| (d + f) as f64);
        assert_eq!(loss_aux(&y, &y, &topo).unwrap(), 0.0);
    }

    #[test]
    fn aux_moves_with_translation_of_prediction() {
        let topo = SkeletonTopology::chain(2, vec![vec![0, 1]]).unwrap();
        let y = Tensor::from_fn([2, 3, 1], |j, _, _| j as f64);
        let shifted = y.translated([1.0, 1.0, 1.0]).unwrap();
        assert_eq!(loss_aux(&shifted, &y, &topo).unwrap(), 6.0);
    }

    #[test]
    fn mpjpe_equals_position_loss_on_random_pairs() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let (p, y) = (rand_seq(5, 6, &mut rng), rand_seq(5, 6, &mut rng));
            let scaled = loss_pos(&p.scaled(1e-3), &y.scaled(1e-3)).unwrap() * 1e3;
            assert!((mpjpe(&p, &y).unwrap() - scaled).abs() <= 1e-12 * scaled.max(1.0));
            let per = mpjpe_per_frame(&p, &y).unwrap();
            assert!((per.iter().sum::<f64>() / 6.0 - mpjpe(&p, &y).unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn drift_is_zero_for_rigid_prediction() {
        let topo = SkeletonTopology::chain(3, vec![vec![0, 1, 2]]).unwrap();
        let mut rng = Rng::new(6);
        let y = rand_seq(3, 4, &mut rng);
        let moved = y.translated([5.0, -2.0, 1.0]).unwrap();
        assert!(bone_length_drift(&moved, &y, &topo).unwrap() <= 1e-12);
        assert!(matches!(loss_pos(&Tensor::<f64>::zeros([3, 3, 2]), &y), Err(crate::Error::Config(_))));
    }
}
