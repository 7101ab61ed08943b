//! The full network: embedding, stacked blocks and the output head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, ParamStore};
use crate::dynamics::{
    centroid_apply, group_size, inter_group_apply, intra_group_apply, iterative_dk_apply, kinematics_apply,
    parallel_dk_apply, DkMode, GroupInteractionParams, InterMode,
};
use crate::eqmlp::{eqmlp_size, EqOutput};
use crate::error::{Error, Result};
use crate::fields::{field_force, FieldMode, FieldParams};
use crate::geom::rng::Rng;
use crate::geom::tensor::Tensor;
use crate::geom::LinearMap;
use crate::nn::{join, linear, mlp_size, register_linear, register_mlp};
use crate::scalar::Scalar;
use crate::topology::{HopEmbedding, IndexPlan, SkeletonTopology};

/// Structural switches for ablations and fault injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variant {
    pub field: FieldMode,
    pub inter: bool,
    pub inter_mode: InterMode,
    pub intra: bool,
    pub dk: DkMode,
    pub centroid_update: bool,
    /// Adds this constant along the first coordinate axis to every embedded
    /// position. Non-zero values break rotation equivariance.
    pub fault_axis_bias: f64,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            field: FieldMode::Full,
            inter: true,
            inter_mode: InterMode::Shared,
            intra: true,
            dk: DkMode::Parallel,
            centroid_update: true,
            fault_axis_bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub t_h: usize,
    pub t_f: usize,
    pub channels: usize,
    /// Hidden width of every invariant MLP and of the hop encoding.
    pub hidden: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Millimeters are multiplied by this before entering the network.
    pub input_scale: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_h: 10,
            t_f: 10,
            channels: 16,
            hidden: 32,
            blocks: 4,
            seed: 0,
            input_scale: 1e-3,
            variant: Variant::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.t_h < 2 {
            return bad("t_h must be at least 2 (velocities need two frames)");
        }
        if self.t_f == 0 || self.channels == 0 || self.blocks == 0 {
            return bad("t_f, channels and blocks must be positive");
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return bad("hidden width must be even and positive");
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be finite and positive");
        }
        if !self.variant.fault_axis_bias.is_finite() {
            return bad("fault_axis_bias must be finite");
        }
        Ok(())
    }
}

fn field_parts(mode: FieldMode) -> (bool, bool) {
    match mode {
        FieldMode::Full => (true, true),
        FieldMode::SpatialOnly => (true, false),
        FieldMode::TemporalOnly => (false, true),
        FieldMode::None => (false, false),
    }
}

/// Exact scalar parameter count implied by a configuration and topology.
pub fn param_count_for(cfg: &ModelConfig, topo: &SkeletonTopology) -> usize {
    let (c, h, n) = (cfg.channels, cfg.hidden, topo.n_joints());
    let v = &cfg.variant;
    let (spatial, temporal) = field_parts(v.field);
    let mut block = 0;
    if spatial {
        block += mlp_size(c, h, c) + c * c + h + n * c;
    }
    if temporal {
        block += mlp_size(c, h, c) + c * c + n * c;
    }
    let full_group = group_size(topo, c, h, v.inter_mode);
    let inter_out = match v.inter_mode {
        InterMode::Shared => EqOutput::Pooled,
        InterMode::Slice => EqOutput::PerVariable,
    };
    let inter = eqmlp_size(topo.n_groups(), c, h, inter_out);
    let dk = eqmlp_size(3, c, h, EqOutput::Pooled);
    let intra = full_group - inter - dk - 2 * c * c;
    block += 2 * c * c;
    if v.inter {
        block += inter;
    }
    if v.intra {
        block += intra;
    }
    if v.dk == DkMode::Parallel {
        block += dk;
    }
    if !v.centroid_update {
        block -= c * c;
    }
    (2 * cfg.t_h - 1) * c + cfg.blocks * block + c * cfg.t_f
}

/// Total scalars in a parameter store.
pub fn param_count<T: Scalar>(params: &ParamStore<T>) -> usize {
    params.scalar_count()
}

fn block_prefix(l: usize) -> String {
    format!("block.{l}")
}

fn init_params<T: Scalar>(cfg: &ModelConfig, topo: &SkeletonTopology) -> Result<ParamStore<T>> {
    let root = Rng::new(cfg.seed);
    let (c, h, n) = (cfg.channels, cfg.hidden, topo.n_joints());
    let v = &cfg.variant;
    let mut store = ParamStore::new();
    let mut rng = root.split("embed");
    register_linear(&mut store, "embed.pos", &LinearMap::<T>::init(cfg.t_h, c, &mut rng))?;
    register_linear(&mut store, "embed.vel", &LinearMap::<T>::init(cfg.t_h - 1, c, &mut rng))?;
    let (spatial, temporal) = field_parts(v.field);
    for l in 0..cfg.blocks {
        let bp = block_prefix(l);
        let mut rng = root.split(&bp);
        let fp = FieldParams::<T>::init(n, c, h, &mut rng);
        let gp = GroupInteractionParams::<T>::init(topo, c, h, v.inter_mode, &mut rng);
        let f = join(&bp, "field");
        if spatial {
            register_mlp(&mut store, &join(&f, "phi_e"), &fp.phi_e)?;
            register_linear(&mut store, &join(&f, "phi_lin_s"), &fp.phi_lin_s)?;
            register_linear(&mut store, &join(&f, "phi_att"), &fp.phi_att)?;
            store.insert(join(&f, "beta"), fp.beta.clone())?;
        }
        if temporal {
            register_mlp(&mut store, &join(&f, "phi_m"), &fp.phi_m)?;
            register_linear(&mut store, &join(&f, "phi_lin_t"), &fp.phi_lin_t)?;
            store.insert(join(&f, "gamma"), fp.gamma.clone())?;
        }
        let g = join(&bp, "group");
        if v.inter {
            gp.inter.register(&mut store, &join(&g, "inter"))?;
        }
        if v.intra {
            for (s, p) in gp.intra.iter().enumerate() {
                p.register(&mut store, &join(&g, &format!("intra.{s}")))?;
            }
        }
        if v.dk == DkMode::Parallel {
            gp.dk.register(&mut store, &join(&g, "dk"))?;
        }
        register_linear(&mut store, &join(&g, "v_update"), &gp.v_update)?;
        if v.centroid_update {
            register_linear(&mut store, &join(&g, "phi_c"), &gp.phi_c)?;
        }
    }
    let mut rng = root.split("head");
    register_linear(&mut store, "head", &LinearMap::<T>::init(c, cfg.t_f, &mut rng))?;
    Ok(store)
}

/// Paths of every weight that must keep unit column sums.
pub(crate) fn is_centroid_map(path: &str) -> bool {
    path.ends_with(".group.phi_c")
}

/// Restores unit column sums on every centroid map.
pub fn project_constraints<T: Scalar>(params: &mut ParamStore<T>) {
    for (path, p) in params.iter_mut() {
        if is_centroid_map(path) {
            crate::geom::project_unit_column_sums(&mut p.value);
        }
    }
}

/// A configured network bound to its topology and parameters.
#[derive(Clone, Debug)]
pub struct GgMotion<T> {
    config: ModelConfig,
    topology: SkeletonTopology,
    pub(crate) plan: IndexPlan,
    hop: HopEmbedding,
    pub params: ParamStore<T>,
}

impl<T: Scalar> GgMotion<T> {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, topology: SkeletonTopology) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, &topology)?;
        Self::assemble(config, topology, params)
    }

    /// Binds existing parameters; their paths and shapes must match the
    /// layout the configuration implies exactly.
    pub fn from_parts(config: ModelConfig, topology: SkeletonTopology, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = init_params::<T>(&config, &topology)?;
        for (path, p) in expected.iter() {
            let got = params
                .get(path)
                .ok_or_else(|| Error::Validation(format!("missing parameter {path}")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::Validation(format!(
                    "parameter {path} has shape {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        if let Some(extra) = params.paths().find(|p| expected.get(p).is_none()) {
            return Err(Error::Validation(format!("unexpected parameter {extra}")));
        }
        Self::assemble(config, topology, params)
    }

    fn assemble(config: ModelConfig, topology: SkeletonTopology, params: ParamStore<T>) -> Result<Self> {
        let plan = IndexPlan::new(&topology);
        let hop = HopEmbedding::for_topology(&topology, config.hidden)?;
        Ok(Self {
            config,
            topology,
            plan,
            hop,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_input(&self, shape: [usize; 3]) -> Result<()> {
        let want = [self.topology.n_joints(), 3, self.config.t_h];
        if shape != want {
            return Err(Error::Usage(format!("input has shape {shape:?}, model expects {want:?}")));
        }
        Ok(())
    }

    /// Forward pass on network-scale input `[N, 3, T_h]` giving `[N, 3, T_f]`.
    pub fn forward_on<B: Backend<T>>(&self, b: &mut B, input: &Tensor<T>) -> Result<B::Var> {
        self.check_input(input.shape())?;
        let cfg = &self.config;
        let v = &cfg.variant;
        let raw = b.constant(input.clone());
        let mut centroid = b.mean_axes(&raw)?;
        let centered = b.sub(&raw, &centroid)?;
        let x = linear(b, "embed.pos", &centered)?;
        let mut x = b.add(&x, &centroid)?;
        let diff = b.constant(Tensor::from_fn([1, cfg.t_h, cfg.t_h - 1], |_, r, c| {
            if r == c + 1 {
                T::one()
            } else if r == c {
                -T::one()
            } else {
                T::zero()
            }
        }));
        let steps = b.matmul(&raw, &diff)?;
        let mut vel = linear(b, "embed.vel", &steps)?;
        if v.fault_axis_bias != 0.0 {
            let bias = b.constant(Tensor::from_fn([1, 3, 1], |_, r, _| {
                if r == 0 {
                    T::of(v.fault_axis_bias)
                } else {
                    T::zero()
                }
            }));
            x = b.add(&x, &bias)?;
        }
        for l in 0..cfg.blocks {
            let bp = block_prefix(l);
            let gp = join(&bp, "group");
            let mut f = field_force(b, &join(&bp, "field"), v.field, &self.plan, &self.hop, &x, &vel, &centroid)?;
            if v.inter {
                f = inter_group_apply(b, &gp, v.inter_mode, &self.plan, &f)?;
            }
            if v.intra {
                f = intra_group_apply(b, &gp, &self.plan, &f)?;
            }
            let a = match v.dk {
                DkMode::Parallel => parallel_dk_apply(b, &gp, &self.plan, &f, &x, &vel)?,
                DkMode::Iterative => iterative_dk_apply(b, &self.plan, &f, &x, &vel)?,
            };
            let (xn, vn) = kinematics_apply(b, &gp, &a, &x, &vel)?;
            x = xn;
            vel = vn;
            if v.centroid_update {
                centroid = centroid_apply(b, &gp, &x)?;
            }
        }
        let centered = b.sub(&x, &centroid)?;
        let y = linear(b, "head", &centered)?;
        b.add(&y, &centroid)
    }

    /// Predicts `T_f` future frames in millimeters from `T_h` past frames in millimeters.
    pub fn predict(&self, past_mm: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(past_mm.shape())?;
        let s = T::of(self.config.input_scale);
        let mut e = Eager::new(&self.params);
        let out = self.forward_on(&mut e, &past_mm.scaled(s))?;
        Ok(out.scaled(T::one() / s))
    }
}
