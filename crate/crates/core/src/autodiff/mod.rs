//! Reverse-mode differentiation over the primitive set in [`crate::geom::prim`].

mod backend;
pub mod gradcheck;
mod params;
mod tape;

pub use backend::Backend;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, GradSample, Program};
pub use params::{Gradients, Param, ParamStore};
pub use tape::{Eager, NodeId, Tape};

#[cfg(test)]
mod prim_gradient_tests {
    //! Each primitive's backward rule against central differences.
    use std::sync::Arc;

    use super::*;
    use crate::error::Result;
    use crate::geom::rng::Rng;
    use crate::geom::tensor::Tensor;

    fn probe(shape: [usize; 3]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i, r, c| 0.3 + 0.17 * i as f64 - 0.11 * r as f64 + 0.07 * c as f64)
    }

    macro_rules! prim_program {
        ($name:ident, |$b:ident, $x:ident, $y:ident| $body:expr) => {
            struct $name;
            impl Program<f64> for $name {
                fn run<B: Backend<f64>>(&self, $b: &mut B) -> Result<B::Var> {
                    let $x = $b.param("x")?;
                    let $y = $b.param("y")?;
                    let out = $body?;
                    let p = $b.constant(probe($b.shape(&out)));
                    let w = $b.mul(&out, &p)?;
                    $b.sum_all(&w)
                }
            }
        };
    }

    fn store(xs: [usize; 3], ys: [usize; 3], seed: u64) -> ParamStore<f64> {
        let mut rng = Rng::new(seed);
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_fn(xs, |_, _, _| rng.normal())).unwrap();
        s.insert("y", Tensor::from_fn(ys, |_, _, _| rng.normal())).unwrap();
        s
    }

    fn check<P: Program<f64>>(p: &P, xs: [usize; 3], ys: [usize; 3], tol: f64) {
        let params = store(xs, ys, 77);
        let mut rng = Rng::new(5);
        let cfg = GradCheckConfig {
            n_coords: 40,
            ..Default::default()
        };
        let report = grad_check(p, &params, &mut rng, cfg).unwrap();
        assert!(report.max_rel_error <= tol, "worst {} at {}", report.max_rel_error, report.worst_path);
    }

    prim_program!(AddB, |b, x, y| b.add(&x, &y));
    prim_program!(SubB, |b, x, y| b.sub(&x, &y));
    prim_program!(MulB, |b, x, y| b.mul(&x, &y));
    prim_program!(MatMulP, |b, x, y| b.matmul(&x, &y));
    prim_program!(CrossP, |b, x, y| b.cross(&x, &y));
    prim_program!(GramP, |b, x, y| b.gram(&x, &y, 3));
    prim_program!(MixP, |b, x, y| b.mix_vars(&x, &y, 2));
    prim_program!(ColNormP, |b, x, y| {
        let s = b.add(&x, &y)?;
        b.col_norm(&s)
    });
    prim_program!(RowNormP, |b, x, y| {
        let s = b.sub(&x, &y)?;
        b.row_normalize(&s, 1e-8)
    });
    prim_program!(SmoothP, |b, x, y| {
        let t = b.tanh(&x)?;
        let s = b.sigmoid(&y)?;
        b.mul(&t, &s)
    });
    prim_program!(RecipP, |b, x, y| {
        let n = b.col_norm(&x)?;
        let r = b.recip_guarded(&n, 1e-8)?;
        b.mul(&y, &r)
    });
    prim_program!(LayoutP, |b, x, y| {
        let c = b.concat_rows(&[&x, &y])?;
        let v = b.vars_to_channels(&c, 2)?;
        let m = b.mean_axes(&v)?;
        let s = b.scale(&v, 1.5)?;
        let s = b.sub(&s, &m)?;
        b.reshape(&s, [1, 4, 3 * 4])
    });
    prim_program!(IndexP, |b, x, y| {
        let idx: Arc<[usize]> = Arc::from(vec![2, 0, 0, 1]);
        let g = b.gather(&x, &idx)?;
        let s = b.mul(&g, &y)?;
        let back: Arc<[usize]> = Arc::from(vec![1, 1, 0, 2]);
        b.scatter_add(&s, &back, 3)
    });

    #[test]
    fn elementwise_with_broadcast() {
        check(&AddB, [3, 3, 4], [1, 3, 1], 1e-7);
        check(&SubB, [3, 3, 4], [3, 1, 4], 1e-7);
        check(&MulB, [3, 3, 4], [3, 1, 1], 1e-7);
        check(&MulB, [2, 3, 4], [2, 3, 4], 1e-7);
    }

    #[test]
    fn matmul_shared_and_batched_weights() {
        check(&MatMulP, [4, 3, 5], [1, 5, 2], 1e-7);
        check(&MatMulP, [4, 3, 5], [4, 5, 2], 1e-7);
    }

    #[test]
    fn geometric_primitives() {
        check(&CrossP, [3, 3, 4], [3, 3, 4], 1e-7);
        check(&GramP, [2, 9, 4], [2, 9, 4], 1e-7);
        check(&MixP, [2, 6, 3], [2, 2, 2], 1e-7);
        check(&ColNormP, [3, 3, 4], [3, 3, 4], 1e-7);
        check(&RowNormP, [2, 3, 5], [2, 3, 5], 1e-7);
        check(&RecipP, [3, 3, 4], [3, 3, 4], 1e-7);
    }

    #[test]
    fn smooth_and_layout_primitives() {
        check(&SmoothP, [2, 3, 4], [2, 3, 4], 1e-7);
        check(&LayoutP, [2, 3, 4], [2, 3, 4], 1e-7);
        check(&IndexP, [3, 3, 2], [4, 3, 2], 1e-7);
    }

    #[test]
    fn cross_backward_identity() {
        // d/da [c . (a x b)] = b x c, exactly by the scalar triple product.
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let mut s = ParamStore::new();
            let a = Tensor::<f64>::from_fn([1, 3, 3], |_, _, _| rng.normal());
            let bt = Tensor::<f64>::from_fn([1, 3, 3], |_, _, _| rng.normal());
            let ct = Tensor::<f64>::from_fn([1, 3, 3], |_, _, _| rng.normal());
            s.insert("a", a).unwrap();
            let mut tape = Tape::new(&s);
            let av = tape.param("a").unwrap();
            let bv = tape.constant(bt.clone());
            let cv = tape.constant(ct.clone());
            let x = tape.cross(&av, &bv).unwrap();
            let d = tape.mul(&x, &cv).unwrap();
            let l = tape.sum_all(&d).unwrap();
            let g = tape.backward(l).unwrap();
            let expected = crate::geom::prim::Prim::Cross.forward(&[&bt, &ct]).unwrap();
            assert!(g.get("a").unwrap().max_abs_diff(&expected) <= 1e-12);
        }
    }
}
