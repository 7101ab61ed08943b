use ggmotion::data::{read_ggs1, windows, write_ggs1, MotionSequence};
use ggmotion::geom::orthogonal::{det3, orthogonality_defect, OrthogonalParams};
use ggmotion::geom::tensor::Tensor;
use ggmotion::model::{GgMotion, ModelConfig};
use ggmotion::topology::SkeletonTopology;
use ggmotion::train::{loss_pos, mpjpe};
use proptest::prelude::*;

fn motion(joints: usize, frames: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2000.0..2000.0f64, joints * 3 * frames)
        .prop_map(move |v| Tensor::from_vec([joints, 3, frames], v).unwrap())
}

fn orthogonal() -> impl Strategy<Value = OrthogonalParams> {
    (prop::array::uniform4(-1.0..1.0f64), any::<bool>())
        .prop_filter("quaternion away from zero", |(q, _)| q.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|(quat, reflect)| OrthogonalParams { quat, reflect })
}

fn translated(x: &Tensor<f64>, t: [f64; 3]) -> Tensor<f64> {
    let [n, _, f] = x.shape();
    Tensor::from_fn([n, 3, f], |i, d, c| x.get(i, d, c) + t[d])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_matrices_are_orthogonal(o in orthogonal()) {
        let m = o.matrix::<f64>();
        prop_assert!(orthogonality_defect(&m) < 1e-12);
        let want = if o.reflect { -1.0 } else { 1.0 };
        prop_assert!((det3(&m) - want).abs() < 1e-12);
    }

    #[test]
    fn forward_is_equivariant(
        x in motion(5, 4),
        o in orthogonal(),
        t in prop::array::uniform3(-1000.0..1000.0f64),
        seed in 0u64..1000,
    ) {
        let cfg = ModelConfig { t_h: 4, t_f: 2, channels: 4, hidden: 6, blocks: 2, seed, ..Default::default() };
        let model = GgMotion::<f64>::new(cfg, SkeletonTopology::chain_grouped(5, 2).unwrap()).unwrap();
        let m = o.matrix::<f64>();
        let lhs = model.predict(&translated(&x.rotated(&m).unwrap(), t)).unwrap();
        let rhs = translated(&model.predict(&x).unwrap().rotated(&m).unwrap(), t);
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs) / scale < 1e-9);
    }

    #[test]
    fn errors_are_nonnegative_and_vanish_on_identity(a in motion(3, 2), b in motion(3, 2)) {
        prop_assert!(mpjpe(&a, &b).unwrap() >= 0.0);
        prop_assert!(loss_pos(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        prop_assert!((mpjpe(&a, &b).unwrap() - mpjpe(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn windows_tile_the_source(frames in 4usize..30, t_h in 2usize..5, t_f in 1usize..4, stride in 1usize..5) {
        prop_assume!(t_h + t_f <= frames);
        let seq = MotionSequence::new(25.0, Tensor::from_fn([2, 3, frames], |j, d, f| (100 * j + 10 * d + f) as f64)).unwrap();
        let ws = windows(&seq, t_h, t_f, stride).unwrap();
        prop_assert_eq!(ws.len(), (frames - t_h - t_f) / stride + 1);
        for w in &ws {
            for f in 0..t_h + t_f {
                let got = if f < t_h { w.past.get(1, 2, f) } else { w.future.get(1, 2, f - t_h) };
                prop_assert_eq!(got, seq.positions().get(1, 2, w.start + f));
            }
        }
    }

    #[test]
    fn sequences_round_trip_at_single_precision(x in motion(4, 3)) {
        let x = x.map(|v| f64::from(v as f32));
        let seq = MotionSequence::new(30.0, x).unwrap();
        let mut bytes = Vec::new();
        write_ggs1(&seq, &mut bytes).unwrap();
        let back = read_ggs1(&bytes).unwrap();
        prop_assert_eq!(back.positions(), seq.positions());
        prop_assert!(read_ggs1(&bytes[..bytes.len() - 1]).is_err());
    }
}
