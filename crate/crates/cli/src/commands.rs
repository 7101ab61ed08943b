use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use ggmotion::ablation::{run_ablation, AblationConfig, Axis};
use ggmotion::autodiff::{grad_check, GradCheckConfig};
use ggmotion::check::{check_equivariance, random_input, CheckConfig};
use ggmotion::checkpoint::{encode, load_checkpoint};
use ggmotion::data::{load_sequence, split_windows, synth_generate, windows, write_ggs1, MotionSequence, SynthConfig, Window};
use ggmotion::geom::rng::Rng;
use ggmotion::model::{GgMotion, ModelConfig};
use ggmotion::topology::SkeletonTopology;
use ggmotion::train::{evaluate_mpjpe, evaluate_per_frame, scale_windows, train, AuxMode, Objective, TrainConfig};
use ggmotion::{Error, Result};

use crate::manifest::write_atomic;

/// What a successful command hands back to `main`.
pub struct Report {
    pub output: Value,
    pub config: Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    /// Non-zero when the command ran but its check failed.
    pub status: i32,
}

pub const SEED_ENV: &str = "GGMOTION_SEED";

pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn load_topology(path: Option<&Path>) -> Result<SkeletonTopology> {
    match path {
        None => Ok(SkeletonTopology::default_22()),
        Some(p) => SkeletonTopology::load(p),
    }
}

fn sequence_bytes(seq: &MotionSequence) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    write_ggs1(seq, &mut bytes)?;
    Ok(bytes)
}

fn load_data(paths: &[PathBuf], topo: &SkeletonTopology) -> Result<Vec<MotionSequence>> {
    if paths.is_empty() {
        return Err(Error::Usage("at least one --data file is required".into()));
    }
    paths
        .iter()
        .map(|p| {
            let seq = load_sequence(p)?;
            if seq.n_joints() != topo.n_joints() {
                return Err(Error::Usage(format!(
                    "{} has {} joints, topology has {}",
                    p.display(),
                    seq.n_joints(),
                    topo.n_joints()
                )));
            }
            Ok(seq)
        })
        .collect()
}

fn all_windows(seqs: &[MotionSequence], t_h: usize, t_f: usize, stride: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(windows(s, t_h, t_f, stride)?);
    }
    Ok(out)
}

pub fn synth(config: Option<&Path>, out: &Path, topology_out: Option<&Path>) -> Result<Report> {
    let mut cfg: SynthConfig = read_json(config)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    let seq = synth_generate(&cfg)?;
    write_atomic(out, &sequence_bytes(&seq)?)?;
    let mut artifacts = vec![out.to_path_buf()];
    if let Some(t) = topology_out {
        write_atomic(t, &serde_json::to_vec_pretty(&cfg.topology)?)?;
        artifacts.push(t.to_path_buf());
    }
    Ok(Report {
        output: json!({
            "out": out,
            "joints": seq.n_joints(),
            "frames": seq.n_frames(),
            "fps": seq.fps(),
        }),
        config: to_value(&cfg)?,
        seed: Some(cfg.seed),
        artifacts,
        status: 0,
    })
}

pub struct TrainArgs<'a> {
    pub data: &'a [PathBuf],
    pub topology: Option<&'a Path>,
    pub model_config: Option<&'a Path>,
    pub train_config: Option<&'a Path>,
    pub out: &'a Path,
    pub history: Option<&'a Path>,
    pub stride: usize,
}

pub fn train_cmd(a: TrainArgs<'_>) -> Result<Report> {
    let topo = load_topology(a.topology)?;
    let mut mcfg: ModelConfig = read_json(a.model_config)?;
    let mut tcfg: TrainConfig = read_json(a.train_config)?;
    if let Some(seed) = seed_override()? {
        mcfg.seed = seed;
        tcfg.seed = seed;
    }
    let seqs = load_data(a.data, &topo)?;
    let split = split_windows(all_windows(&seqs, mcfg.t_h, mcfg.t_f, a.stride)?, tcfg.seed);
    let mut model = GgMotion::<f64>::new(mcfg.clone(), topo)?;
    let history_path = a
        .history
        .map(Path::to_path_buf)
        .unwrap_or_else(|| a.out.with_extension("history.jsonl"));
    let mut lines = Vec::new();
    let result = train(&mut model, &tcfg, &split.train, &split.val, |r| {
        if let Ok(line) = serde_json::to_string(r) {
            log::info!("{line}");
            lines.push(line);
        }
    });
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(&history_path, text.as_bytes())?;
    let report = result?;
    write_atomic(a.out, &encode(&model)?)?;
    let test_mpjpe = if split.test.is_empty() {
        None
    } else {
        Some(evaluate_mpjpe(&model, &split.test)?)
    };
    let last = report.history.last();
    Ok(Report {
        output: json!({
            "checkpoint": a.out,
            "history": history_path,
            "epochs": report.history.len(),
            "steps": report.steps,
            "train_windows": split.train.len(),
            "val_windows": split.val.len(),
            "test_windows": split.test.len(),
            "final_loss_pos": last.map(|r| r.loss_pos),
            "final_loss_aux": last.map(|r| r.loss_aux),
            "final_val_mpjpe": last.and_then(|r| r.val_mpjpe),
            "test_mpjpe": test_mpjpe,
            "param_count": model.param_count(),
        }),
        config: json!({ "model": mcfg, "train": tcfg, "stride": a.stride, "data": a.data }),
        seed: Some(tcfg.seed),
        artifacts: vec![a.out.to_path_buf(), history_path],
        status: 0,
    })
}

pub fn predict(ckpt: &Path, input: &Path, out: &Path, start: Option<usize>) -> Result<Report> {
    let model: GgMotion<f64> = load_checkpoint(ckpt)?;
    let seq = load_sequence(input)?;
    let (n, t_h) = (model.topology().n_joints(), model.config().t_h);
    if seq.n_joints() != n {
        return Err(Error::Usage(format!(
            "input has {} joints, checkpoint topology has {n}",
            seq.n_joints()
        )));
    }
    if seq.n_frames() < t_h {
        return Err(Error::Usage(format!("input has {} frames, model needs {t_h}", seq.n_frames())));
    }
    let start = start.unwrap_or(seq.n_frames() - t_h);
    let past = seq.frames(start, t_h)?;
    let future = MotionSequence::new(seq.fps(), model.predict(&past)?)?;
    write_atomic(out, &sequence_bytes(&future)?)?;
    Ok(Report {
        output: json!({
            "out": out,
            "joints": n,
            "frames": future.n_frames(),
            "fps": seq.fps(),
            "input_start": start,
        }),
        config: json!({ "checkpoint": ckpt, "input": input, "start": start }),
        seed: Some(model.config().seed),
        artifacts: vec![out.to_path_buf()],
        status: 0,
    })
}

/// Horizons in milliseconds reported when the frame rate lands on them.
pub const MS_GRID: [u32; 4] = [80, 160, 320, 400];

pub fn eval(ckpt: &Path, data: &[PathBuf], stride: usize) -> Result<Report> {
    let model: GgMotion<f64> = load_checkpoint(ckpt)?;
    let seqs = load_data(data, model.topology())?;
    let cfg = model.config();
    let ws = all_windows(&seqs, cfg.t_h, cfg.t_f, stride)?;
    let per_frame = evaluate_per_frame(&model, &ws)?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    let per_horizon: BTreeMap<usize, f64> = per_frame.iter().enumerate().map(|(k, &e)| (k + 1, e)).collect();
    let fps = seqs[0].fps();
    let mut ms_grid = BTreeMap::new();
    if seqs.iter().all(|s| s.fps() == fps) {
        for ms in MS_GRID {
            let frames = ms as f64 * fps / 1000.0;
            let k = frames.round() as usize;
            if (frames - k as f64).abs() < 1e-6 && (1..=per_frame.len()).contains(&k) {
                ms_grid.insert(ms, per_frame[k - 1]);
            }
        }
    }
    Ok(Report {
        output: json!({
            "windows": ws.len(),
            "fps": fps,
            "mpjpe_per_horizon": per_horizon,
            "mpjpe_ms": ms_grid,
            "mean": mean,
        }),
        config: json!({ "checkpoint": ckpt, "data": data, "stride": stride }),
        seed: Some(cfg.seed),
        artifacts: Vec::new(),
        status: 0,
    })
}

pub struct ModelSource<'a> {
    pub ckpt: Option<&'a Path>,
    pub seed: Option<u64>,
    pub model_config: Option<&'a Path>,
    pub topology: Option<&'a Path>,
}

fn model_from(src: &ModelSource<'_>, fault_axis_bias: Option<f64>) -> Result<GgMotion<f64>> {
    let model = match src.ckpt {
        Some(p) => {
            if src.seed.is_some() || src.model_config.is_some() || src.topology.is_some() {
                return Err(Error::Usage("--ckpt cannot be combined with --seed, --model-config or --topology".into()));
            }
            load_checkpoint(p)?
        }
        None => {
            let mut cfg: ModelConfig = read_json(src.model_config)?;
            if let Some(s) = src.seed {
                cfg.seed = s;
            }
            if let Some(s) = seed_override()? {
                cfg.seed = s;
            }
            GgMotion::new(cfg, load_topology(src.topology)?)?
        }
    };
    match fault_axis_bias {
        None => Ok(model),
        Some(b) => {
            let mut cfg = model.config().clone();
            cfg.variant.fault_axis_bias = b;
            GgMotion::from_parts(cfg, model.topology().clone(), model.params)
        }
    }
}

pub fn check(
    src: ModelSource<'_>,
    trials: usize,
    tol: f64,
    translation_only: bool,
    fault_axis_bias: Option<f64>,
) -> Result<Report> {
    let model = model_from(&src, fault_axis_bias)?;
    let seed = model.config().seed;
    let input = random_input(&model, &mut Rng::new(seed).split("check.input"));
    let cfg = CheckConfig {
        trials,
        tol,
        seed,
        translation_only,
        ..Default::default()
    };
    let r = check_equivariance(&model, &input, &cfg)?;
    Ok(Report {
        status: if r.passed { 0 } else { 3 },
        output: to_value(&r)?,
        config: json!({ "check": cfg, "model": model.config(), "checkpoint": src.ckpt }),
        seed: Some(seed),
        artifacts: Vec::new(),
    })
}

pub struct GradArgs<'a> {
    pub seed: u64,
    pub coords: usize,
    pub model_config: Option<&'a Path>,
    pub topology: Option<&'a Path>,
    pub windows: usize,
    pub step: f64,
    pub tol: f64,
    pub aux: AuxMode,
}

pub fn gradcheck(a: GradArgs<'_>) -> Result<Report> {
    let seed = seed_override()?.unwrap_or(a.seed);
    let mut mcfg: ModelConfig = read_json(a.model_config)?;
    mcfg.seed = seed;
    let topo = load_topology(a.topology)?;
    if a.windows == 0 {
        return Err(Error::Usage("--windows must be positive".into()));
    }
    let seq = synth_generate(&SynthConfig {
        topology: topo.clone(),
        frames: mcfg.t_h + mcfg.t_f + a.windows - 1,
        seed,
        ..Default::default()
    })?;
    let ws = windows(&seq, mcfg.t_h, mcfg.t_f, 1)?;
    let model = GgMotion::<f64>::new(mcfg.clone(), topo)?;
    let program = Objective {
        model: &model,
        items: scale_windows(&ws, mcfg.input_scale),
        aux: a.aux,
        aux_weight: 1.0,
    };
    let cfg = GradCheckConfig {
        n_coords: a.coords,
        step: a.step,
        rel_tol: a.tol,
        ..Default::default()
    };
    let r = grad_check(&program, &model.params, &mut Rng::new(seed).split("gradcheck"), cfg)?;
    Ok(Report {
        status: if r.passed { 0 } else { 3 },
        output: json!({
            "coords": r.samples.len(),
            "max_rel_error": r.max_rel_error,
            "worst_path": r.worst_path,
            "worst_offset": r.worst_offset,
            "rel_tol": r.rel_tol,
            "passed": r.passed,
            "samples": r.samples,
        }),
        config: json!({ "model": mcfg, "windows": a.windows, "step": a.step, "aux": a.aux }),
        seed: Some(seed),
        artifacts: Vec::new(),
    })
}

pub fn ablate(axis: Axis, config: Option<&Path>, history: bool) -> Result<Report> {
    let mut cfg: AblationConfig = read_json(config)?;
    if let Some(seed) = seed_override()? {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
    }
    let mut r = run_ablation(axis, &cfg)?;
    if !history {
        r.results.iter_mut().for_each(|v| v.history.clear());
    }
    Ok(Report {
        output: to_value(&r)?,
        config: to_value(&cfg)?,
        seed: Some(cfg.model.seed),
        artifacts: Vec::new(),
        status: 0,
    })
}

/// Prints one JSON document on its own line.
pub fn emit(value: &Value) -> std::io::Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer(&mut lock, value).map_err(std::io::Error::other)?;
    writeln!(lock)?;
    lock.flush()
}
