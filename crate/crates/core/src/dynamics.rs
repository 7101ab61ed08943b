//! Group interaction, dynamics and kinematics for one block, plus the
//! sequential rigid-link propagation used as a physics oracle and ablation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, ParamStore};
use crate::eqmlp::{eqmlp_apply, eqmlp_size, EqMlpParams, EqOutput};
use crate::error::{config_err, Error, Result};
use crate::fields::{stack_joints, unstack_joints};
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::geom::{Centroid, GeoFeature, LinearMap, NORM_EPS};
use crate::nn::{join, linear, register_linear};
use crate::scalar::Scalar;
use crate::topology::{IndexPlan, SkeletonTopology};

/// How the inter-group output reaches each joint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterMode {
    /// One pooled output added to every joint.
    #[default]
    Shared,
    /// Each joint receives the intermediate of its own group.
    Slice,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DkMode {
    /// Every joint from its own force, parent offset and relative velocity.
    #[default]
    Parallel,
    /// Parent-to-child propagation, one tree level at a time.
    Iterative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupInteractionParams<T> {
    pub inter: EqMlpParams<T>,
    pub intra: Vec<EqMlpParams<T>>,
    pub dk: EqMlpParams<T>,
    pub v_update: LinearMap<T>,
    /// Columns sum to one.
    pub phi_c: LinearMap<T>,
}

impl<T: Scalar> GroupInteractionParams<T> {
    pub fn init(topo: &SkeletonTopology, channels: usize, hidden: usize, inter_mode: InterMode, rng: &mut Rng) -> Self {
        let inter_out = match inter_mode {
            InterMode::Shared => EqOutput::Pooled,
            InterMode::Slice => EqOutput::PerVariable,
        };
        let inter = EqMlpParams::init(topo.n_groups(), channels, hidden, inter_out, rng);
        let intra = topo
            .groups()
            .iter()
            .map(|g| EqMlpParams::init(g.len(), channels, hidden, EqOutput::PerVariable, rng))
            .collect();
        let dk = EqMlpParams::init(3, channels, hidden, EqOutput::Pooled, rng);
        let v_update = LinearMap::init(channels, channels, rng);
        let mut phi_c = LinearMap::init(channels, channels, rng);
        phi_c.project_unit_column_sums();
        Self {
            inter,
            intra,
            dk,
            v_update,
            phi_c,
        }
    }

    pub fn register(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
        self.inter.register(store, &join(prefix, "inter"))?;
        for (s, p) in self.intra.iter().enumerate() {
            p.register(store, &join(prefix, &format!("intra.{s}")))?;
        }
        self.dk.register(store, &join(prefix, "dk"))?;
        register_linear(store, &join(prefix, "v_update"), &self.v_update)?;
        register_linear(store, &join(prefix, "phi_c"), &self.phi_c)
    }
}

pub(crate) fn group_size(topo: &SkeletonTopology, channels: usize, hidden: usize, inter_mode: InterMode) -> usize {
    let inter_out = match inter_mode {
        InterMode::Shared => EqOutput::Pooled,
        InterMode::Slice => EqOutput::PerVariable,
    };
    let intra: usize = topo
        .groups()
        .iter()
        .map(|g| eqmlp_size(g.len(), channels, hidden, EqOutput::PerVariable))
        .sum();
    eqmlp_size(topo.n_groups(), channels, hidden, inter_out)
        + intra
        + eqmlp_size(3, channels, hidden, EqOutput::Pooled)
        + 2 * channels * channels
}

/// Positions and velocities of every joint at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState<T> {
    pub x: Vec<GeoFeature<T>>,
    pub v: Vec<GeoFeature<T>>,
    pub layer: usize,
}

/// Resultant force of each group through the inter-group attention,
/// added residually.
pub fn inter_group_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    mode: InterMode,
    plan: &IndexPlan,
    f: &B::Var,
) -> Result<B::Var> {
    let [_, _, c] = b.shape(f);
    let s = plan.n_groups;
    let sums = b.scatter_add(f, &plan.group_of, s)?;
    let stacked = b.reshape(&sums, [1, s * 3, c])?;
    let p = join(prefix, "inter");
    match mode {
        InterMode::Shared => {
            let delta = eqmlp_apply(b, &p, s, EqOutput::Pooled, &stacked)?;
            b.add(f, &delta)
        }
        InterMode::Slice => {
            let each = eqmlp_apply(b, &p, s, EqOutput::PerVariable, &stacked)?;
            let each = b.reshape(&each, [s, 3, c])?;
            let delta = b.gather(&each, &plan.group_of)?;
            b.add(f, &delta)
        }
    }
}

/// Per-group attention over the member forces, one delta per member.
pub fn intra_group_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    plan: &IndexPlan,
    f: &B::Var,
) -> Result<B::Var> {
    let [n, _, c] = b.shape(f);
    let mut out = f.clone();
    for (s, members) in plan.group_members.iter().enumerate() {
        let k = members.len();
        let g = b.gather(f, members)?;
        let g = b.reshape(&g, [1, k * 3, c])?;
        let d = eqmlp_apply(b, &join(prefix, &format!("intra.{s}")), k, EqOutput::PerVariable, &g)?;
        let d = b.reshape(&d, [k, 3, c])?;
        let d = b.scatter_add(&d, members, n)?;
        out = b.add(&out, &d)?;
    }
    Ok(out)
}

/// `a_j = f_j - dk([f_j, X_j - X_i, V_j - V_i])` with `i` the parent of `j`;
/// the global root is its own parent, so its offsets are zero.
pub fn parallel_dk_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    plan: &IndexPlan,
    f: &B::Var,
    x: &B::Var,
    v: &B::Var,
) -> Result<B::Var> {
    let xp = b.gather(x, &plan.parent_or_self)?;
    let vp = b.gather(v, &plan.parent_or_self)?;
    let r = b.sub(x, &xp)?;
    let dv = b.sub(v, &vp)?;
    let stacked = b.concat_rows(&[f, &r, &dv])?;
    let corr = eqmlp_apply(b, &join(prefix, "dk"), 3, EqOutput::Pooled, &stacked)?;
    b.sub(f, &corr)
}

/// One rigid link on backend values: `a_j = a_i + alpha x r + omega x v`
/// with `alpha = r x (f_j - a_i) / |r|^2` and `omega = r x v / |r|^2`.
fn link_on<T: Scalar, B: Backend<T>>(b: &mut B, a_i: &B::Var, r: &B::Var, v: &B::Var, f_j: &B::Var) -> Result<B::Var> {
    let len = b.col_norm(r)?;
    let len2 = b.mul(&len, &len)?;
    let inv = b.recip_guarded(&len2, T::of(NORM_EPS * NORM_EPS))?;
    let rel = b.sub(f_j, a_i)?;
    let alpha = b.cross(r, &rel)?;
    let alpha = b.mul(&alpha, &inv)?;
    let omega = b.cross(r, v)?;
    let omega = b.mul(&omega, &inv)?;
    let ta = b.cross(&alpha, r)?;
    let tw = b.cross(&omega, v)?;
    let out = b.add(a_i, &ta)?;
    b.add(&out, &tw)
}

/// Level-by-level propagation from the root (whose acceleration is its force).
pub fn iterative_dk_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    plan: &IndexPlan,
    f: &B::Var,
    x: &B::Var,
    v: &B::Var,
) -> Result<B::Var> {
    let n = plan.n_joints;
    let fr = b.gather(f, &plan.root)?;
    let mut acc = b.scatter_add(&fr, &plan.root, n)?;
    for (joints, parents) in &plan.levels {
        let a_i = b.gather(&acc, parents)?;
        let xj = b.gather(x, joints)?;
        let xi = b.gather(x, parents)?;
        let vj = b.gather(v, joints)?;
        let vi = b.gather(v, parents)?;
        let fj = b.gather(f, joints)?;
        let r = b.sub(&xj, &xi)?;
        let dv = b.sub(&vj, &vi)?;
        let a_j = link_on(b, &a_i, &r, &dv, &fj)?;
        let placed = b.scatter_add(&a_j, joints, n)?;
        acc = b.add(&acc, &placed)?;
    }
    Ok(acc)
}

/// `V' = V + v_update(a)`, `X' = X + V'`.
pub fn kinematics_apply<T: Scalar, B: Backend<T>>(
    b: &mut B,
    prefix: &str,
    a: &B::Var,
    x: &B::Var,
    v: &B::Var,
) -> Result<(B::Var, B::Var)> {
    let dv = linear(b, &join(prefix, "v_update"), a)?;
    let v_next = b.add(v, &dv)?;
    let x_next = b.add(x, &v_next)?;
    Ok((x_next, v_next))
}

/// Mean of `phi_c(X)` over joints and channels: `[1, 3, 1]`.
pub fn centroid_apply<T: Scalar, B: Backend<T>>(b: &mut B, prefix: &str, x: &B::Var) -> Result<B::Var> {
    let mapped = linear(b, &join(prefix, "phi_c"), x)?;
    b.mean_axes(&mapped)
}

fn group_store<T: Scalar>(p: &GroupInteractionParams<T>) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    p.register(&mut store, "g")?;
    Ok(store)
}

fn inter_mode_of<T: Scalar>(p: &GroupInteractionParams<T>) -> InterMode {
    match p.inter.output {
        EqOutput::Pooled => InterMode::Shared,
        EqOutput::PerVariable => InterMode::Slice,
    }
}

fn check_joints<T>(xs: &[GeoFeature<T>], topo: &SkeletonTopology, what: &str) -> Result<()> {
    if xs.len() != topo.n_joints() {
        return Err(config_err(format!(
            "{what}: {} joint features for a {}-joint topology",
            xs.len(),
            topo.n_joints()
        )));
    }
    Ok(())
}

pub fn inter_group<T: Scalar>(
    f: &[GeoFeature<T>],
    topo: &SkeletonTopology,
    p: &GroupInteractionParams<T>,
) -> Result<Vec<GeoFeature<T>>> {
    check_joints(f, topo, "inter_group")?;
    let store = group_store(p)?;
    let mut e = Eager::new(&store);
    let plan = IndexPlan::new(topo);
    let out = inter_group_apply(&mut e, "g", inter_mode_of(p), &plan, &stack_joints(f)?)?;
    Ok(unstack_joints(&out))
}

pub fn intra_group<T: Scalar>(
    f: &[GeoFeature<T>],
    topo: &SkeletonTopology,
    p: &GroupInteractionParams<T>,
) -> Result<Vec<GeoFeature<T>>> {
    check_joints(f, topo, "intra_group")?;
    let store = group_store(p)?;
    let mut e = Eager::new(&store);
    let plan = IndexPlan::new(topo);
    let out = intra_group_apply(&mut e, "g", &plan, &stack_joints(f)?)?;
    Ok(unstack_joints(&out))
}

pub fn parallel_dk<T: Scalar>(
    f: &[GeoFeature<T>],
    state: &BlockState<T>,
    topo: &SkeletonTopology,
    p: &GroupInteractionParams<T>,
) -> Result<Vec<GeoFeature<T>>> {
    check_joints(f, topo, "parallel_dk")?;
    let store = group_store(p)?;
    let mut e = Eager::new(&store);
    let plan = IndexPlan::new(topo);
    let out = parallel_dk_apply(
        &mut e,
        "g",
        &plan,
        &stack_joints(f)?,
        &stack_joints(&state.x)?,
        &stack_joints(&state.v)?,
    )?;
    Ok(unstack_joints(&out))
}

pub fn kinematics_update<T: Scalar>(
    state: &BlockState<T>,
    a: &[GeoFeature<T>],
    p: &GroupInteractionParams<T>,
) -> Result<BlockState<T>> {
    let store = group_store(p)?;
    let mut e = Eager::new(&store);
    let (x, v) = kinematics_apply(
        &mut e,
        "g",
        &stack_joints(a)?,
        &stack_joints(&state.x)?,
        &stack_joints(&state.v)?,
    )?;
    Ok(BlockState {
        x: unstack_joints(&x),
        v: unstack_joints(&v),
        layer: state.layer + 1,
    })
}

pub fn centroid_update<T: Scalar>(state: &BlockState<T>, p: &GroupInteractionParams<T>) -> Result<Centroid<T>> {
    let store = group_store(p)?;
    let mut e = Eager::new(&store);
    let c = centroid_apply(&mut e, "g", &stack_joints(&state.x)?)?;
    Centroid::from_tensor(&c)
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// One rigid link: acceleration of the child from the parent's acceleration,
/// the link offset `r`, the relative velocity `v` and the child's force.
pub fn propagate_link(a_i: [f64; 3], r: [f64; 3], v: [f64; 3], f_j: [f64; 3]) -> Result<[f64; 3]> {
    let len2 = r.iter().map(|x| x * x).sum::<f64>();
    if len2.sqrt() <= NORM_EPS {
        return Err(Error::Domain(format!("degenerate link: |r| = {:e}", len2.sqrt())));
    }
    let rel = [f_j[0] - a_i[0], f_j[1] - a_i[1], f_j[2] - a_i[2]];
    let alpha = cross3(r, rel).map(|x| x / len2);
    let omega = cross3(r, v).map(|x| x / len2);
    let ta = cross3(alpha, r);
    let tw = cross3(omega, v);
    Ok([0, 1, 2].map(|k| a_i[k] + ta[k] + tw[k]))
}

/// Sequential propagation down `chain` (parent-to-leaf joint indices),
/// columnwise over channels. Entry 0 of the result is `a_root`.
pub fn iterative_dk_oracle(
    a_root: &GeoFeature<f64>,
    chain: &[usize],
    x: &[GeoFeature<f64>],
    v: &[GeoFeature<f64>],
    f: &[GeoFeature<f64>],
) -> Result<Vec<GeoFeature<f64>>> {
    if chain.is_empty() {
        return Err(config_err("empty chain"));
    }
    let c = a_root.channels();
    let mut out = vec![a_root.clone()];
    for w in chain.windows(2) {
        let (i, j) = (w[0], w[1]);
        let a_i = out.last().expect("non-empty");
        let mut cols = Vec::with_capacity(c);
        for k in 0..c {
            let (xi, xj) = (x[i].column(k), x[j].column(k));
            let (vi, vj) = (v[i].column(k), v[j].column(k));
            let r = [0, 1, 2].map(|d| xj[d] - xi[d]);
            let dv = [0, 1, 2].map(|d| vj[d] - vi[d]);
            cols.push(propagate_link(a_i.column(k), r, dv, f[j].column(k))?);
        }
        out.push(GeoFeature::from_columns(&cols)?);
    }
    Ok(out)
}

/// Model-window state from stacked `[N, 3, C]` tensors.
impl<T: Scalar> BlockState<T> {
    pub fn from_tensors(x: &Tensor<T>, v: &Tensor<T>, layer: usize) -> Self {
        Self {
            x: unstack_joints(x),
            v: unstack_joints(v),
            layer,
        }
    }
}
