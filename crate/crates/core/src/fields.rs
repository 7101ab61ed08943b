//! Spatio-temporal radial field: per-joint motion forces from neighbor
//! edges (spatial) and from the offset to the centroid (temporal).
//!
//! Joint features are carried as one `[N, 3, C]` value: item = joint,
//! row = coordinate axis, column = channel.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, ParamStore};
use crate::error::{config_err, Result};
use crate::geom::prim::Prim;
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::geom::{Centroid, GeoFeature, InvariantMlp, LinearMap};
use crate::nn::{join, linear, mlp, register_linear, register_mlp};
use crate::scalar::Scalar;
use crate::topology::{HopEmbedding, IndexPlan, SkeletonTopology};

/// Which radial-field terms contribute to the force.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    #[default]
    Full,
    SpatialOnly,
    TemporalOnly,
    /// No field at all: the force is the velocity itself.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    pub phi_e: InvariantMlp<T>,
    pub phi_m: InvariantMlp<T>,
    pub phi_lin_s: LinearMap<T>,
    pub phi_lin_t: LinearMap<T>,
    /// `C' -> 1`, followed by a logistic gate.
    pub phi_att: LinearMap<T>,
    /// `[N, 1, C]` per-joint channel scales.
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
}

impl<T: Scalar> FieldParams<T> {
    pub fn init(n_joints: usize, channels: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            phi_e: InvariantMlp::init(channels, hidden, channels, rng),
            phi_m: InvariantMlp::init(channels, hidden, channels, rng),
            phi_lin_s: LinearMap::init(channels, channels, rng),
            phi_lin_t: LinearMap::init(channels, channels, rng),
            phi_att: LinearMap::init(hidden, 1, rng),
            beta: Tensor::ones([n_joints, 1, channels]),
            gamma: Tensor::ones([n_joints, 1, channels]),
        }
    }

    pub fn register(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        register_mlp(store, &join(prefix, "phi_e"), &self.phi_e)?;
        register_mlp(store, &join(prefix, "phi_m"), &self.phi_m)?;
        register_linear(store, &join(prefix, "phi_lin_s"), &self.phi_lin_s)?;
        register_linear(store, &join(prefix, "phi_lin_t"), &self.phi_lin_t)?;
        register_linear(store, &join(prefix, "phi_att"), &self.phi_att)?;
        store.insert(join(prefix, "beta"), self.beta.clone())?;
        store.insert(join(prefix, "gamma"), self.gamma.clone())
    }
}

#[cfg(test)]
pub(crate) fn field_size(n_joints: usize, channels: usize, hidden: usize) -> usize {
    use crate::nn::mlp_size;
    2 * mlp_size(channels, hidden, channels) + 2 * channels * channels + hidden + 2 * n_joints * channels
}

/// `[K, 1, C']` hop encodings for every non-root group member.
fn gate_inputs<T: Scalar>(plan: &IndexPlan, hop: &HopEmbedding) -> Result<Tensor<T>> {
    let width = hop.row(0)?.len();
    let mut data = Vec::with_capacity(plan.gate_hops.len() * width);
    for &h in &plan.gate_hops {
        data.extend(hop.row(h)?.iter().map(|&x| T::of(x)));
    }
    Tensor::from_vec([plan.gate_hops.len(), 1, width], data)
}

/// Per-joint scalar gate `[N, 1, 1]`: the sum over non-root members of the
/// joint's group of `sigmoid(phi_att(hop_embed(hop(root, m))))`.
fn hop_gate<T: Scalar, B: Backend<T>>(b: &mut B, prefix: &str, plan: &IndexPlan, hop: &HopEmbedding) -> Result<B::Var> {
    let emb = b.constant(gate_inputs(plan, hop)?);
    let logits = linear(b, &join(prefix, "phi_att"), &emb)?;
    let gates = b.sigmoid(&logits)?;
    let per_group = b.scatter_add(&gates, &plan.gate_group, plan.n_groups)?;
    b.gather(&per_group, &plan.group_of)
}

/// `f~_i = V_i + e~_i * sum_{j in N_i} e_ij * phi_lin_s(X_i - X_j)`.
pub fn spatial_field_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    plan: &IndexPlan,
    hop: &HopEmbedding,
    x: &B::Var,
    v: &B::Var,
) -> Result<B::Var> {
    let xi = b.gather(x, &plan.edge_src)?;
    let xj = b.gather(x, &plan.edge_dst)?;
    let diff = b.sub(&xi, &xj)?;
    let dist = b.col_norm(&diff)?;
    let weight = mlp(b, &join(prefix, "phi_e"), &dist)?;
    let beta = b.param(&join(prefix, "beta"))?;
    let beta = b.gather(&beta, &plan.edge_src)?;
    let weight = b.mul(&weight, &beta)?;
    let dir = linear(b, &join(prefix, "phi_lin_s"), &diff)?;
    let msg = b.mul(&dir, &weight)?;
    let agg = b.scatter_add(&msg, &plan.edge_src, plan.n_joints)?;
    let gate = hop_gate(b, prefix, plan, hop)?;
    let agg = b.mul(&agg, &gate)?;
    b.add(v, &agg)
}

/// `f-_i = V_i + m_i * phi_lin_t(X_i - c)` with `m_i = gamma_i * phi_m(|X_i - c|)`.
/// `centroid` is `[1, 3, 1]`.
pub fn temporal_field_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    x: &B::Var,
    v: &B::Var,
    centroid: &B::Var,
) -> Result<B::Var> {
    let diff = b.sub(x, centroid)?;
    let dist = b.col_norm(&diff)?;
    let weight = mlp(b, &join(prefix, "phi_m"), &dist)?;
    let gamma = b.param(&join(prefix, "gamma"))?;
    let weight = b.mul(&weight, &gamma)?;
    let dir = linear(b, &join(prefix, "phi_lin_t"), &diff)?;
    let msg = b.mul(&dir, &weight)?;
    b.add(v, &msg)
}

/// Force for one block under the chosen field mode.
pub fn field_force<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    mode: FieldMode,
    plan: &IndexPlan,
    hop: &HopEmbedding,
    x: &B::Var,
    v: &B::Var,
    centroid: &B::Var,
) -> Result<B::Var> {
    match mode {
        FieldMode::Full => {
            let s = spatial_field_apply(b, prefix, plan, hop, x, v)?;
            let t = temporal_field_apply(b, prefix, x, v, centroid)?;
            b.add(&s, &t)
        }
        FieldMode::SpatialOnly => spatial_field_apply(b, prefix, plan, hop, x, v),
        FieldMode::TemporalOnly => temporal_field_apply(b, prefix, x, v, centroid),
        FieldMode::None => Ok(v.clone()),
    }
}

pub(crate) fn stack_joints<T: Scalar>(features: &[GeoFeature<T>]) -> Result<Tensor<T>> {
    let first = features.first().ok_or_else(|| config_err("no joint features"))?;
    let c = first.channels();
    if features.iter().any(|f| f.channels() != c) {
        return Err(config_err("joint features disagree on channel count"));
    }
    let data = features.iter().flat_map(|f| f.tensor().data().iter().copied()).collect();
    Tensor::from_vec([features.len(), 3, c], data)
}

pub(crate) fn unstack_joints<T: Scalar>(t: &Tensor<T>) -> Vec<GeoFeature<T>> {
    (0..t.items())
        .map(|i| GeoFeature::from_tensor(t.item_tensor(i)).expect("three rows"))
        .collect()
}

fn field_store<T: Scalar>(p: &FieldParams<T>) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    p.register(&mut store, "field")?;
    Ok(store)
}

/// Spatial term `f~` per joint.
pub fn spatial_field<T: Scalar>(
    x: &[GeoFeature<T>],
    v: &[GeoFeature<T>],
    topo: &SkeletonTopology,
    hop: &HopEmbedding,
    p: &FieldParams<T>,
) -> Result<Vec<GeoFeature<T>>> {
    if x.len() != topo.n_joints() || v.len() != x.len() {
        return Err(config_err("spatial_field: joint count differs from topology"));
    }
    let store = field_store(p)?;
    let mut e = Eager::new(&store);
    let plan = IndexPlan::new(topo);
    let out = spatial_field_apply(&mut e, "field", &plan, hop, &stack_joints(x)?, &stack_joints(v)?)?;
    Ok(unstack_joints(&out))
}

/// Temporal term `f-` per joint.
pub fn temporal_field<T: Scalar>(
    x: &[GeoFeature<T>],
    v: &[GeoFeature<T>],
    centroid: &Centroid<T>,
    p: &FieldParams<T>,
) -> Result<Vec<GeoFeature<T>>> {
    if v.len() != x.len() {
        return Err(config_err("temporal_field: position and velocity counts differ"));
    }
    let store = field_store(p)?;
    let mut e = Eager::new(&store);
    let c = Tensor::from_vec([1, 3, 1], centroid.0.to_vec())?;
    let out = temporal_field_apply(&mut e, "field", &stack_joints(x)?, &stack_joints(v)?, &c)?;
    Ok(unstack_joints(&out))
}

/// Elementwise sum of the two field terms.
pub fn total_force<T: Scalar>(spatial: &[GeoFeature<T>], temporal: &[GeoFeature<T>]) -> Result<Vec<GeoFeature<T>>> {
    if spatial.len() != temporal.len() {
        return Err(config_err("total_force: joint counts differ"));
    }
    spatial
        .iter()
        .zip(temporal)
        .map(|(a, b)| GeoFeature::from_tensor(Prim::Add.forward(&[a.tensor(), b.tensor()])?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::orthogonal::sample_orthogonal;

    fn setup(seed: u64, c: usize) -> (SkeletonTopology, HopEmbedding, FieldParams<f64>, Rng) {
        let mut rng = Rng::new(seed);
        let topo = SkeletonTopology::default_22();
        let hop = HopEmbedding::for_topology(&topo, 8).unwrap();
        let mut p = FieldParams::init(22, c, 8, &mut rng);
        p.beta = Tensor::from_fn([22, 1, c], |_, _, _| rng.uniform(0.5, 1.5));
        p.gamma = Tensor::from_fn([22, 1, c], |_, _, _| rng.uniform(0.5, 1.5));
        (topo, hop, p, rng)
    }

    fn feats(n: usize, c: usize, rng: &mut Rng) -> Vec<GeoFeature<f64>> {
        (0..n).map(|_| GeoFeature::random(c, rng)).collect()
    }

    fn rot(fs: &[GeoFeature<f64>], r: &crate::geom::tensor::Mat3<f64>) -> Vec<GeoFeature<f64>> {
        fs.iter().map(|f| f.rotated(r)).collect()
    }

    fn shift(fs: &[GeoFeature<f64>], t: [f64; 3]) -> Vec<GeoFeature<f64>> {
        fs.iter()
            .map(|f| GeoFeature::from_tensor(f.tensor().translated(t).unwrap()).unwrap())
            .collect()
    }

    fn diff(a: &[GeoFeature<f64>], b: &[GeoFeature<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.tensor().max_abs_diff(y.tensor())).fold(0.0, f64::max)
    }

    /// Frozen weights making `phi_e` and `phi_m` output exactly one.
    fn saturate(m: &mut InvariantMlp<f64>, c: usize, h: usize) {
        m.w1 = LinearMap::zeros(c, h);
        m.b1 = Tensor::filled([1, 1, h], 50.0);
        m.w2 = LinearMap::from_tensor(Tensor::filled([1, h, c], 1.0 / h as f64)).unwrap();
    }

    #[test]
    fn coincident_joints_at_rest_give_zero_spatial_force() {
        let (topo, hop, p, mut rng) = setup(1, 4);
        let x = vec![GeoFeature::random(4, &mut rng); 22];
        let v = vec![GeoFeature::zeros(4); 22];
        let f = spatial_field(&x, &v, &topo, &hop, &p).unwrap();
        assert!(f.iter().all(|g| g.tensor().max_abs() == 0.0));
    }

    #[test]
    fn spatial_field_is_equivariant_and_translation_invariant() {
        let (topo, hop, p, mut rng) = setup(2, 5);
        for _ in 0..100 {
            let x = feats(22, 5, &mut rng);
            let v = feats(22, 5, &mut rng);
            let r = sample_orthogonal(&mut rng);
            let base = spatial_field(&x, &v, &topo, &hop, &p).unwrap();
            let rotated = spatial_field(&rot(&x, &r), &rot(&v, &r), &topo, &hop, &p).unwrap();
            assert!(diff(&rotated, &rot(&base, &r)) <= 1e-10);
            let t = [rng.normal() * 10.0, rng.normal(), -rng.normal()];
            let shifted = spatial_field(&shift(&x, t), &v, &topo, &hop, &p).unwrap();
            assert!(diff(&shifted, &base) <= 1e-10);
        }
    }

    #[test]
    fn two_joint_chain_with_frozen_weights() {
        let c = 3;
        let topo = SkeletonTopology::chain(2, vec![vec![0, 1]]).unwrap();
        let hop = HopEmbedding::for_topology(&topo, 4).unwrap();
        let mut rng = Rng::new(3);
        let mut p = FieldParams::init(2, c, 4, &mut rng);
        saturate(&mut p.phi_e, c, 4);
        p.phi_lin_s = LinearMap::identity(c);
        // A gate logit of 50 gives sigmoid = 1 to double precision.
        p.phi_att = LinearMap::from_tensor(Tensor::from_vec([1, 4, 1], vec![0.0, 0.0, 0.0, 50.0]).unwrap()).unwrap();
        let x = feats(2, c, &mut rng);
        let v = feats(2, c, &mut rng);
        let f = spatial_field(&x, &v, &topo, &hop, &p).unwrap();
        let expected = Prim::Add
            .forward(&[v[0].tensor(), &Prim::Sub.forward(&[x[0].tensor(), x[1].tensor()]).unwrap()])
            .unwrap();
        assert!(f[0].tensor().max_abs_diff(&expected) <= 1e-15);
    }

    #[test]
    fn zero_beta_leaves_only_velocity() {
        let (topo, hop, mut p, mut rng) = setup(4, 4);
        for c in 0..4 {
            p.beta.set(7, 0, c, 0.0);
        }
        let x = feats(22, 4, &mut rng);
        let v = feats(22, 4, &mut rng);
        let f = spatial_field(&x, &v, &topo, &hop, &p).unwrap();
        assert_eq!(f[7], v[7]);
    }

    #[test]
    fn singleton_groups_have_zero_gate() {
        let topo = SkeletonTopology::chain(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let hop = HopEmbedding::for_topology(&topo, 4).unwrap();
        let mut rng = Rng::new(5);
        let p = FieldParams::init(3, 2, 4, &mut rng);
        let x = feats(3, 2, &mut rng);
        let v = feats(3, 2, &mut rng);
        assert_eq!(spatial_field(&x, &v, &topo, &hop, &p).unwrap(), v);
    }

    #[test]
    fn temporal_field_cases() {
        let (_, _, mut p, mut rng) = setup(6, 3);
        let c = Centroid([0.3, -1.0, 2.0]);
        let at_centroid = vec![GeoFeature::from_columns(&[c.0; 3]).unwrap(); 22];
        let v0 = vec![GeoFeature::zeros(3); 22];
        let f = temporal_field(&at_centroid, &v0, &c, &p).unwrap();
        assert!(f.iter().all(|g| g.tensor().max_abs() == 0.0));

        saturate(&mut p.phi_m, 3, 8);
        p.phi_lin_t = LinearMap::identity(3);
        p.gamma = Tensor::ones([1, 1, 3]);
        let d = GeoFeature::random(3, &mut rng);
        let x = GeoFeature::from_tensor(d.tensor().translated(c.0).unwrap()).unwrap();
        let v = GeoFeature::random(3, &mut rng);
        let f = temporal_field(&[x], std::slice::from_ref(&v), &c, &p).unwrap();
        let expected = Prim::Add.forward(&[v.tensor(), d.tensor()]).unwrap();
        assert!(f[0].tensor().max_abs_diff(&expected) <= 1e-14);
    }

    #[test]
    fn temporal_field_is_equivariant() {
        let (_, _, p, mut rng) = setup(7, 4);
        for _ in 0..100 {
            let x = feats(22, 4, &mut rng);
            let v = feats(22, 4, &mut rng);
            let c = Centroid([rng.normal(), rng.normal(), rng.normal()]);
            let r = sample_orthogonal(&mut rng);
            let rc = Centroid(crate::geom::orthogonal::mat_vec(&r, c.0));
            let base = temporal_field(&x, &v, &c, &p).unwrap();
            let rotated = temporal_field(&rot(&x, &r), &rot(&v, &r), &rc, &p).unwrap();
            assert!(diff(&rotated, &rot(&base, &r)) <= 1e-10);
            let t = [1.5, -2.0, 0.25];
            let tc = Centroid([c.0[0] + t[0], c.0[1] + t[1], c.0[2] + t[2]]);
            let shifted = temporal_field(&shift(&x, t), &v, &tc, &p).unwrap();
            assert!(diff(&shifted, &base) <= 1e-10);
        }
    }

    #[test]
    fn total_force_is_elementwise_sum() {
        let mut rng = Rng::new(8);
        let a = feats(4, 3, &mut rng);
        let z = vec![GeoFeature::zeros(3); 4];
        assert_eq!(total_force(&a, &z).unwrap(), a);
        assert!(total_force(&z, &z).unwrap().iter().all(|g| g.tensor().max_abs() == 0.0));
        let b = feats(4, 3, &mut rng);
        let s = total_force(&a, &b).unwrap();
        for j in 0..4 {
            for (k, &val) in s[j].tensor().data().iter().enumerate() {
                assert_eq!(val, a[j].tensor().data()[k] + b[j].tensor().data()[k]);
            }
        }
    }

    #[test]
    fn size_formula_matches_registration() {
        let (_, _, p, _) = setup(9, 5);
        let s = field_store(&p).unwrap();
        assert_eq!(s.scalar_count(), field_size(22, 5, 8));
    }
}
