//! Module ablations on synthetic data.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, windows, SynthConfig};
use crate::dynamics::{DkMode, InterMode};
use crate::error::{Error, Result};
use crate::fields::FieldMode;
use crate::model::{GgMotion, ModelConfig, Variant};
use crate::train::{evaluate_bone_drift, evaluate_mpjpe, train, AuxMode, EpochRecord, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Field,
    Group,
    Dk,
    Loss,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(Self::Field),
            "group" => Ok(Self::Group),
            "dk" => Ok(Self::Dk),
            "loss" => Ok(Self::Loss),
            other => Err(Error::Usage(format!("unknown ablation axis {other:?}; use field, group, dk or loss"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub variant: Variant,
    pub aux: AuxMode,
}

fn with(base: &Variant, f: impl FnOnce(&mut Variant)) -> Variant {
    let mut v = base.clone();
    f(&mut v);
    v
}

/// The variants compared along `axis`, starting from `base`. The first
/// entry is always the unmodified configuration.
pub fn variants(axis: Axis, base: &Variant, aux: AuxMode) -> Vec<AblationVariant> {
    let item = |name: &str, variant: Variant, aux: AuxMode| AblationVariant {
        name: name.into(),
        variant,
        aux,
    };
    match axis {
        Axis::Field => [
            ("full", FieldMode::Full),
            ("spatial_only", FieldMode::SpatialOnly),
            ("temporal_only", FieldMode::TemporalOnly),
            ("no_field", FieldMode::None),
        ]
        .into_iter()
        .map(|(n, m)| item(n, with(base, |v| v.field = m), aux))
        .collect(),
        Axis::Group => vec![
            item("full", base.clone(), aux),
            item("no_inter", with(base, |v| v.inter = false), aux),
            item("no_intra", with(base, |v| v.intra = false), aux),
            item(
                "no_group",
                with(base, |v| {
                    v.inter = false;
                    v.intra = false;
                }),
                aux,
            ),
            item("slice_inter", with(base, |v| v.inter_mode = InterMode::Slice), aux),
        ],
        Axis::Dk => vec![
            item("parallel", with(base, |v| v.dk = DkMode::Parallel), aux),
            item("iterative", with(base, |v| v.dk = DkMode::Iterative), aux),
        ],
        Axis::Loss => vec![
            item("pos_aux", base.clone(), AuxMode::Literal),
            item("pos_only", base.clone(), AuxMode::Off),
            item("pos_bone_length", base.clone(), AuxMode::BoneLength),
        ],
    }
}

/// Module axes train under `train.aux`, which defaults to the position loss
/// alone; the loss axis overrides it per variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub stride: usize,
    /// Cap on the number of training windows.
    pub max_windows: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 20,
                batch_size: 16,
                lr: 3e-3,
                lr_decay: 0.95,
                aux: AuxMode::Off,
                ..Default::default()
            },
            synth: SynthConfig {
                frames: 80,
                ..Default::default()
            },
            stride: 2,
            max_windows: Some(32),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub variant: Variant,
    pub aux: AuxMode,
    pub param_count: usize,
    pub initial_mpjpe: f64,
    pub final_train_mpjpe: f64,
    pub bone_drift: f64,
    pub steps: usize,
    pub ms_per_step: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub windows: usize,
    pub results: Vec<VariantResult>,
}

impl AblationReport {
    pub fn get(&self, name: &str) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

/// Trains each variant from the same seed on the same synthetic windows.
pub fn run_ablation(axis: Axis, cfg: &AblationConfig) -> Result<AblationReport> {
    let seq = synth_generate(&cfg.synth)?;
    let mut ws = windows(&seq, cfg.model.t_h, cfg.model.t_f, cfg.stride)?;
    if let Some(k) = cfg.max_windows {
        ws.truncate(k);
    }
    let mut results = Vec::new();
    for v in variants(axis, &cfg.model.variant, cfg.train.aux) {
        let model_cfg = ModelConfig {
            variant: v.variant.clone(),
            ..cfg.model.clone()
        };
        let train_cfg = TrainConfig {
            aux: v.aux,
            ..cfg.train.clone()
        };
        let mut model = GgMotion::<f64>::new(model_cfg, cfg.synth.topology.clone())?;
        let initial_mpjpe = evaluate_mpjpe(&model, &ws)?;
        let started = Instant::now();
        let report = train(&mut model, &train_cfg, &ws, &[], |_| {})?;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        let final_train_mpjpe = evaluate_mpjpe(&model, &ws)?;
        log::info!("{}: {initial_mpjpe:.3} -> {final_train_mpjpe:.3} mm", v.name);
        results.push(VariantResult {
            param_count: model.param_count(),
            initial_mpjpe,
            final_train_mpjpe,
            bone_drift: evaluate_bone_drift(&model, &ws)?,
            steps: report.steps,
            ms_per_step: elapsed / report.steps.max(1) as f64,
            history: report.history,
            name: v.name,
            variant: v.variant,
            aux: v.aux,
        });
    }
    Ok(AblationReport {
        axis,
        windows: ws.len(),
        results,
    })
}
