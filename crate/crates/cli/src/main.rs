//! `ggmotion` command-line interface. Results go to stdout as JSON, logs
//! to stderr, and every run leaves a manifest next to its output.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use ggmotion::ablation::Axis;
use ggmotion::train::AuxMode;
use ggmotion::Error;

use commands::{GradArgs, ModelSource, Report, TrainArgs};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "ggmotion", version, about = "Equivariant human motion prediction")]
struct Cli {
    /// Worker threads for batch evaluation and training.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic articulated sequence.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generator's topology as JSON.
        #[arg(long)]
        topology_out: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint plus a JSONL history.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Predict the frames following a window of an input sequence.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First observed frame; defaults to the last `t_h` frames.
        #[arg(long)]
        start: Option<usize>,
    },
    /// Per-horizon MPJPE of a checkpoint over sequences.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Randomized equivariance check.
    Check {
        #[arg(long, conflicts_with = "seed")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        translation_only: bool,
        /// Inject a constant first-axis bias into the embedded positions.
        #[arg(long)]
        fault_axis_bias: Option<f64>,
    },
    /// Finite-difference check of the training objective's gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        windows: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, value_parser = parse_aux, default_value = "literal")]
        aux: AuxMode,
    },
    /// Compare module variants on synthetic data.
    Ablate {
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Include per-epoch histories in the output.
        #[arg(long)]
        history: bool,
    },
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_aux(s: &str) -> Result<AuxMode, String> {
    match s {
        "literal" => Ok(AuxMode::Literal),
        "bone_length" => Ok(AuxMode::BoneLength),
        "off" => Ok(AuxMode::Off),
        other => Err(format!("unknown aux mode {other:?}; use literal, bone_length or off")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Synth { .. } => "synth",
            Self::Train { .. } => "train",
            Self::Predict { .. } => "predict",
            Self::Eval { .. } => "eval",
            Self::Check { .. } => "check",
            Self::Gradcheck { .. } => "gradcheck",
            Self::Ablate { .. } => "ablate",
        }
    }

    fn out(&self) -> Option<&Path> {
        match self {
            Self::Synth { out, .. } | Self::Train { out, .. } | Self::Predict { out, .. } => Some(out),
            _ => None,
        }
    }

    fn run(&self) -> ggmotion::Result<Report> {
        match self {
            Self::Synth { config, out, topology_out } => commands::synth(config.as_deref(), out, topology_out.as_deref()),
            Self::Train {
                data,
                topology,
                model_config,
                train_config,
                out,
                history,
                stride,
            } => commands::train_cmd(TrainArgs {
                data,
                topology: topology.as_deref(),
                model_config: model_config.as_deref(),
                train_config: train_config.as_deref(),
                out,
                history: history.as_deref(),
                stride: *stride,
            }),
            Self::Predict { ckpt, input, out, start } => commands::predict(ckpt, input, out, *start),
            Self::Eval { ckpt, data, stride } => commands::eval(ckpt, data, *stride),
            Self::Check {
                ckpt,
                seed,
                model_config,
                topology,
                trials,
                tol,
                translation_only,
                fault_axis_bias,
            } => commands::check(
                ModelSource {
                    ckpt: ckpt.as_deref(),
                    seed: *seed,
                    model_config: model_config.as_deref(),
                    topology: topology.as_deref(),
                },
                *trials,
                *tol,
                *translation_only,
                *fault_axis_bias,
            ),
            Self::Gradcheck {
                seed,
                coords,
                model_config,
                topology,
                windows,
                step,
                tol,
                aux,
            } => commands::gradcheck(GradArgs {
                seed: *seed,
                coords: *coords,
                model_config: model_config.as_deref(),
                topology: topology.as_deref(),
                windows: *windows,
                step: *step,
                tol: *tol,
                aux: *aux,
            }),
            Self::Ablate { axis, config, history } => commands::ablate(*axis, config.as_deref(), *history),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Validation(_) | Error::Format { .. } | Error::Json(_) => 2,
        Error::Numerical { .. } => 3,
        Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied) => 2,
        Error::Io(_) | Error::Domain(_) => 1,
    }
}

fn manifest_path(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.manifest {
        return p.clone();
    }
    match cli.command.out() {
        Some(out) => {
            let mut s = out.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("ggmotion-{}.manifest.json", cli.command.name())),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))
            .and_then(|()| cli.command.run()),
        None => cli.command.run(),
    };
    let (mut code, manifest) = match result {
        Ok(report) => {
            if let Err(e) = commands::emit(&report.output) {
                eprintln!("error: writing stdout: {e}");
            }
            (
                report.status,
                RunManifest {
                    command: cli.command.name().into(),
                    args: std::env::args().skip(1).collect(),
                    config: report.config,
                    seed: report.seed,
                    artifacts: report.artifacts,
                    wall_time_s: 0.0,
                    exit_status: report.status,
                    error: None,
                },
            )
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            (
                code,
                RunManifest {
                    command: cli.command.name().into(),
                    args: std::env::args().skip(1).collect(),
                    config: serde_json::Value::Null,
                    seed: None,
                    artifacts: Vec::new(),
                    wall_time_s: 0.0,
                    exit_status: code,
                    error: Some(e.to_string()),
                },
            )
        }
    };
    let manifest = RunManifest {
        wall_time_s: started.elapsed().as_secs_f64(),
        ..manifest
    };
    let path = manifest_path(&cli);
    if let Err(e) = manifest.write(&path) {
        eprintln!("error: writing manifest {}: {e}", path.display());
        if code == 0 {
            code = 1;
        }
    }
    std::process::exit(code);
}
