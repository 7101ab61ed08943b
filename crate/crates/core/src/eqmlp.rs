//! Covariance attention over `n` geometric variables.
//!
//! The attention weights come from the Gram matrix of the projected
//! variables, which is rotation-invariant, so mixing the value projections
//! with them keeps the output equivariant.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, ParamStore};
use crate::error::{config_err, Result};
use crate::geom::prim::Prim;
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::geom::{GeoFeature, InvariantMlp, LinearMap, NORM_EPS};
use crate::nn::{join, linear, mlp, mlp_size, register_linear, register_mlp};
use crate::scalar::Scalar;

/// How the `n` mixed intermediates become an output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqOutput {
    /// Channel concatenation of all intermediates, then an `(n*C) -> C` map.
    Pooled,
    /// One shared `C -> C` map per intermediate, giving `n` outputs.
    PerVariable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EqMlpParams<T> {
    pub vars: usize,
    pub output: EqOutput,
    pub w_q: LinearMap<T>,
    pub w_k: LinearMap<T>,
    pub w_v: LinearMap<T>,
    /// `n^2 -> hidden -> n^2` over the flattened normalized Gram matrix.
    pub mix: InvariantMlp<T>,
    pub out: LinearMap<T>,
}

impl<T: Scalar> EqMlpParams<T> {
    pub fn init(vars: usize, channels: usize, hidden: usize, output: EqOutput, rng: &mut Rng) -> Self {
        let out_in = match output {
            EqOutput::Pooled => vars * channels,
            EqOutput::PerVariable => channels,
        };
        Self {
            vars,
            output,
            w_q: LinearMap::init(channels, channels, rng),
            w_k: LinearMap::init(channels, channels, rng),
            w_v: LinearMap::init(channels, channels, rng),
            mix: InvariantMlp::init(vars * vars, hidden, vars * vars, rng),
            out: LinearMap::init(out_in, channels, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_q.c_in()
    }

    pub fn register(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        register_linear(store, &join(prefix, "w_q"), &self.w_q)?;
        register_linear(store, &join(prefix, "w_k"), &self.w_k)?;
        register_linear(store, &join(prefix, "w_v"), &self.w_v)?;
        register_mlp(store, &join(prefix, "mix"), &self.mix)?;
        register_linear(store, &join(prefix, "out"), &self.out)
    }

    /// Total scalar parameters.
    pub fn size(&self) -> usize {
        eqmlp_size(self.vars, self.channels(), self.mix.w1.c_out(), self.output)
    }
}

pub(crate) fn eqmlp_size(vars: usize, channels: usize, hidden: usize, output: EqOutput) -> usize {
    let out_in = match output {
        EqOutput::Pooled => vars * channels,
        EqOutput::PerVariable => channels,
    };
    3 * channels * channels + mlp_size(vars * vars, hidden, vars * vars) + out_in * channels
}

/// Covariance attention on backend values.
///
/// `x` is `[m, vars*3, C]`: `m` independent instances, each with `vars`
/// stacked `3 x C` variables. Returns `[m, 3, C]` for [`EqOutput::Pooled`]
/// and `[m, vars*3, C]` for [`EqOutput::PerVariable`].
pub fn eqmlp_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    vars: usize,
    output: EqOutput,
    x: &B::Var,
) -> Result<B::Var> {
    let [m, rows, _] = b.shape(x);
    if rows != vars * 3 {
        return Err(config_err(format!(
            "{prefix}: expected {vars} variables ({} rows), got {rows} rows",
            vars * 3
        )));
    }
    let q = linear(b, &join(prefix, "w_q"), x)?;
    let k = linear(b, &join(prefix, "w_k"), x)?;
    let v = linear(b, &join(prefix, "w_v"), x)?;
    let sigma = b.gram(&q, &k, vars)?;
    let sigma = b.row_normalize(&sigma, T::of(NORM_EPS))?;
    let flat = b.reshape(&sigma, [m, 1, vars * vars])?;
    let mixed = mlp(b, &join(prefix, "mix"), &flat)?;
    let weights = b.reshape(&mixed, [m, vars, vars])?;
    let inter = b.mix_vars(&v, &weights, vars)?;
    match output {
        EqOutput::Pooled => {
            let cat = b.vars_to_channels(&inter, vars)?;
            linear(b, &join(prefix, "out"), &cat)
        }
        EqOutput::PerVariable => linear(b, &join(prefix, "out"), &inter),
    }
}

fn stack<T: Scalar>(vars: &[GeoFeature<T>]) -> Result<Tensor<T>> {
    let parts: Vec<&Tensor<T>> = vars.iter().map(GeoFeature::tensor).collect();
    Prim::ConcatRows.forward(&parts)
}

fn run<T: Scalar>(p: &EqMlpParams<T>, vars: &[GeoFeature<T>]) -> Result<Tensor<T>> {
    if vars.len() != p.vars {
        return Err(config_err(format!(
            "equivariant MLP built for {} variables, got {}",
            p.vars,
            vars.len()
        )));
    }
    let mut store = ParamStore::new();
    p.register(&mut store, "eq")?;
    let mut eager = Eager::new(&store);
    let x = stack(vars)?;
    eqmlp_apply(&mut eager, "eq", p.vars, p.output, &x)
}

/// `[1, n, n]` matrix of full inner products `<q_a, k_b>` over both axes.
pub fn gram<T: Scalar>(vars_q: &[GeoFeature<T>], vars_k: &[GeoFeature<T>]) -> Result<Tensor<T>> {
    if vars_q.len() != vars_k.len() {
        return Err(config_err("gram: variable counts differ"));
    }
    Prim::Gram { vars: vars_q.len() }.forward(&[&stack(vars_q)?, &stack(vars_k)?])
}

/// Pooled covariance attention over `vars`.
pub fn eqmlp_forward<T: Scalar>(p: &EqMlpParams<T>, vars: &[GeoFeature<T>]) -> Result<GeoFeature<T>> {
    if p.output != EqOutput::Pooled {
        return Err(config_err("eqmlp_forward needs pooled output; use eqmlp_forward_each"));
    }
    GeoFeature::from_tensor(run(p, vars)?)
}

/// Per-variable covariance attention: one output per input variable.
pub fn eqmlp_forward_each<T: Scalar>(p: &EqMlpParams<T>, vars: &[GeoFeature<T>]) -> Result<Vec<GeoFeature<T>>> {
    if p.output != EqOutput::PerVariable {
        return Err(config_err("eqmlp_forward_each needs per-variable output"));
    }
    let out = run(p, vars)?;
    let c = out.cols();
    let data = out.into_data();
    data.chunks(3 * c)
        .map(|chunk| GeoFeature::from_tensor(Tensor::from_vec([1, 3, c], chunk.to_vec())?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::orthogonal::sample_orthogonal;

    fn random_vars(n: usize, c: usize, rng: &mut Rng) -> Vec<GeoFeature<f64>> {
        (0..n).map(|_| GeoFeature::random(c, rng)).collect()
    }

    fn max_diff(a: &[GeoFeature<f64>], b: &[GeoFeature<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.tensor().max_abs_diff(y.tensor()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gram_of_zeros_is_zero() {
        let z = vec![GeoFeature::<f64>::zeros(4); 3];
        assert_eq!(gram(&z, &z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gram_is_rotation_invariant() {
        let mut rng = Rng::new(10);
        for _ in 0..20 {
            let vars = random_vars(3, 5, &mut rng);
            let r = sample_orthogonal(&mut rng);
            let rv: Vec<_> = vars.iter().map(|v| v.rotated(&r)).collect();
            let d = gram(&rv, &rv).unwrap().max_abs_diff(&gram(&vars, &vars).unwrap());
            assert!(d <= 1e-12, "{d}");
        }
    }

    #[test]
    fn gram_of_orthogonal_unit_columns() {
        let c = 4;
        let e1 = GeoFeature::from_columns(&vec![[1.0, 0.0, 0.0]; c]).unwrap();
        let e2 = GeoFeature::from_columns(&vec![[0.0, 1.0, 0.0]; c]).unwrap();
        let g = gram(&[e1.clone(), e2.clone()], &[e1, e2]).unwrap();
        assert_eq!(g.data(), &[4.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = Rng::new(11);
        let mut p = EqMlpParams::<f64>::init(3, 4, 8, EqOutput::Pooled, &mut rng);
        p.mix.b1 = Tensor::filled([1, 1, 8], 0.7);
        let z = vec![GeoFeature::zeros(4); 3];
        assert_eq!(eqmlp_forward(&p, &z).unwrap().tensor().max_abs(), 0.0);
    }

    #[test]
    fn pooled_output_is_equivariant() {
        let mut rng = Rng::new(12);
        for trial in 0..100 {
            let p = EqMlpParams::<f64>::init(3, 6, 8, EqOutput::Pooled, &mut rng);
            let vars = random_vars(3, 6, &mut rng);
            let r = sample_orthogonal(&mut rng);
            let rv: Vec<_> = vars.iter().map(|v| v.rotated(&r)).collect();
            let lhs = eqmlp_forward(&p, &rv).unwrap();
            let rhs = eqmlp_forward(&p, &vars).unwrap().rotated(&r);
            let d = lhs.tensor().max_abs_diff(rhs.tensor());
            assert!(d <= 1e-10, "trial {trial}: {d}");
        }
    }

    #[test]
    fn per_variable_output_is_equivariant() {
        let mut rng = Rng::new(13);
        for _ in 0..30 {
            let p = EqMlpParams::<f64>::init(4, 5, 6, EqOutput::PerVariable, &mut rng);
            let vars = random_vars(4, 5, &mut rng);
            let r = sample_orthogonal(&mut rng);
            let rv: Vec<_> = vars.iter().map(|v| v.rotated(&r)).collect();
            let lhs = eqmlp_forward_each(&p, &rv).unwrap();
            let rhs: Vec<_> = eqmlp_forward_each(&p, &vars).unwrap().iter().map(|v| v.rotated(&r)).collect();
            assert!(max_diff(&lhs, &rhs) <= 1e-10);
        }
    }

    #[test]
    fn single_variable_with_frozen_mix() {
        // w1 = 0 and a large hidden bias saturate tanh to exactly 1, so the
        // mix stage returns w2 = 1, which equals the normalized self-Gram.
        let mut rng = Rng::new(14);
        let c = 3;
        let mut p = EqMlpParams::<f64>::init(1, c, 2, EqOutput::Pooled, &mut rng);
        p.w_q = LinearMap::identity(c);
        p.w_k = LinearMap::identity(c);
        p.w_v = LinearMap::identity(c);
        p.mix.w1 = LinearMap::zeros(1, 2);
        p.mix.b1 = Tensor::filled([1, 1, 2], 50.0);
        p.mix.w2 = LinearMap::from_tensor(Tensor::from_vec([1, 2, 1], vec![0.5, 0.5]).unwrap()).unwrap();
        let v = GeoFeature::random(c, &mut rng);
        let got = eqmlp_forward(&p, std::slice::from_ref(&v)).unwrap();
        let self_gram: f64 = v.tensor().data().iter().map(|x| x * x).sum();
        let normalized = self_gram / self_gram.abs();
        let w = p.out.weights();
        let expected = Tensor::from_fn([1, 3, c], |_, r, k| {
            (0..c).map(|j| v.tensor().get(0, r, j) * w.get(0, j, k)).sum::<f64>() * normalized
        });
        assert!(got.tensor().max_abs_diff(&expected) <= 1e-14);
    }

    #[test]
    fn wrong_variable_count_rejected() {
        let mut rng = Rng::new(15);
        let p = EqMlpParams::<f64>::init(2, 3, 4, EqOutput::Pooled, &mut rng);
        let vars = random_vars(3, 3, &mut rng);
        assert!(matches!(eqmlp_forward(&p, &vars), Err(crate::Error::Config(_))));
    }

    #[test]
    fn size_matches_registered_scalars() {
        let mut rng = Rng::new(16);
        for output in [EqOutput::Pooled, EqOutput::PerVariable] {
            let p = EqMlpParams::<f64>::init(3, 5, 7, output, &mut rng);
            let mut s = ParamStore::new();
            p.register(&mut s, "x").unwrap();
            assert_eq!(s.scalar_count(), p.size());
        }
    }
}
