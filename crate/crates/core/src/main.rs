use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use targetfill::denoise::{
    predict_epsilon, serve, Denoiser, DenoiserSpec, ExternalDenoiser, Fault, WorkerMode,
};
use targetfill::grid::{run_grid, GridInputs, GridSpec, MANIFEST_FILE, MONTAGE_FILE};
use targetfill::imgio::{load_mask, load_png, save_gray, save_mask, save_png};
use targetfill::masks::{dilate_hole, heated_mask, ring};
use targetfill::noise::{gaussian_draw, make_linear_schedule};
use targetfill::pipeline::{run_candidates, MaskMode, RingSource, SamplerConfig};
use targetfill::rng::{Purpose, SeededRng};
use targetfill::schedules::{jump_plan, LambdaSpec};
use targetfill::{Error, Shape};

const EXIT_INPUT: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_ALL_CELLS_FAILED: u8 = 4;
const EXIT_PROTOCOL: u8 = 5;

#[derive(Parser)]
#[command(name = "targetfill", version, about = "Target-guided diffusion inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inpaint a target into the hole of a scene.
    Run(RunArgs),
    /// Run every cell of a hyperparameter grid.
    Grid(GridArgs),
    /// Write derived mask fields as PNGs.
    Mask {
        #[command(subcommand)]
        tool: MaskTool,
    },
    /// Print the timestep plan for (T, j, r) as JSON.
    ScheduleDump {
        #[arg(long, default_value_t = 200)]
        timesteps: usize,
        #[arg(long, default_value_t = 40)]
        jump_len: usize,
        #[arg(long, default_value_t = 40)]
        resample: usize,
    },
    /// Handshake with a worker and send a few probe requests.
    DenoiserCheck(CheckArgs),
    /// Serve the FDN1 protocol on stdin/stdout with a closed-form backend.
    Worker(WorkerArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaKind {
    Const,
    LinearP,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Binary,
    Heated,
    SceneBuffer,
}

#[derive(Clone, Copy, ValueEnum)]
enum RingArg {
    Ddpm,
    LambdaBlend,
}

#[derive(Args)]
struct DenoiserArgs {
    /// oracle=PATH | gaussian=MU:SIGMA2 | external=CMD
    #[arg(long)]
    denoiser: Option<String>,
    /// Seconds to wait for each worker reply.
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    mask: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    timesteps: usize,
    #[arg(long, default_value_t = 40)]
    jump_len: usize,
    #[arg(long, default_value_t = 40)]
    resample: usize,
    /// Constant λ. Implies `--lambda-schedule const`.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    lambda_schedule: Option<LambdaKind>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, value_enum, default_value = "binary")]
    mask_mode: ModeArg,
    /// Heat buffer size.
    #[arg(long, default_value_t = 4)]
    b: u32,
    /// Combine the heat field with λ instead of ignoring λ.
    #[arg(long)]
    heat_with_lambda: bool,
    #[arg(long, default_value_t = 4)]
    ring_width: usize,
    /// Hole blend constant in scene-buffer mode.
    #[arg(long, default_value_t = 0.95)]
    c: f64,
    #[arg(long, value_enum, default_value = "ddpm")]
    ring_source: RingArg,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    candidates: usize,
}

#[derive(Args)]
struct GridArgs {
    /// GridSpec JSON file.
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    inputs: InputArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    denoiser: DenoiserArgs,
    /// Master seed; overrides the grid file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    columns: Option<usize>,
}

#[derive(Subcommand)]
enum MaskTool {
    /// Heat field, written as round(h * 255).
    Heat {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        b: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hole grown by w dilation steps (black hole on white scene).
    Dilate {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        w: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ring added by dilation, black on white.
    Ring {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        w: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CheckArgs {
    /// Worker command line.
    #[arg(long)]
    worker: String,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 50)]
    timesteps: usize,
    /// Compare replies against an in-process backend (oracle=PATH | gaussian=MU:SIGMA2).
    #[arg(long)]
    expect: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkerKind {
    Oracle,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    BadMagic,
    WrongShape,
    Silent,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long, value_enum)]
    mode: WorkerKind,
    /// Reference PNG for oracle mode.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    var: f64,
    /// Misbehave on purpose, for testing clients.
    #[arg(long, value_enum, default_value = "none")]
    fault: FaultArg,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_backend() { EXIT_BACKEND } else { EXIT_INPUT };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TARGETFILL_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Mask { tool } => cmd_mask(tool),
        Command::ScheduleDump {
            timesteps,
            jump_len,
            resample,
        } => cmd_schedule_dump(timesteps, jump_len, resample),
        Command::DenoiserCheck(args) => cmd_denoiser_check(args),
        Command::Worker(args) => cmd_worker(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn parse_denoiser(text: Option<&str>, timeout_secs: f64) -> Result<DenoiserSpec, Failure> {
    let Some(text) = text else {
        // Uninformed prior with the variance of a uniform [-1, 1] image.
        return Ok(DenoiserSpec::Gaussian {
            mu: 0.0,
            var: 1.0 / 3.0,
        });
    };
    let (kind, arg) = text
        .split_once('=')
        .ok_or_else(|| input_error(format!("denoiser `{text}` is not KIND=ARG")))?;
    match kind {
        "oracle" => Ok(DenoiserSpec::Oracle(load_png(arg)?)),
        "gaussian" => {
            let (mu, var) = arg
                .split_once(':')
                .and_then(|(m, v)| Some((m.parse().ok()?, v.parse().ok()?)))
                .ok_or_else(|| input_error(format!("gaussian denoiser needs MU:SIGMA2, got `{arg}`")))?;
            Ok(DenoiserSpec::Gaussian { mu, var })
        }
        "external" => {
            if !(timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return Err(input_error("timeout must be a positive number of seconds"));
            }
            Ok(DenoiserSpec::External {
                command: arg.to_string(),
                timeout: Duration::from_secs_f64(timeout_secs),
            })
        }
        other => Err(input_error(format!("unknown denoiser kind `{other}`"))),
    }
}

fn run_config(args: &RunArgs) -> Result<SamplerConfig, Failure> {
    let lambda = match (args.lambda_schedule, args.lambda) {
        (Some(LambdaKind::LinearP), _) => LambdaSpec::LinearP { p: args.p },
        (Some(LambdaKind::Const), Some(value)) | (None, Some(value)) => {
            LambdaSpec::Constant { value }
        }
        (Some(LambdaKind::Const), None) => {
            return Err(input_error("--lambda-schedule const needs --lambda"))
        }
        (None, None) => LambdaSpec::LinearP { p: args.p },
    };
    let cfg = SamplerConfig {
        timesteps: args.timesteps,
        jump_len: args.jump_len,
        resample: args.resample,
        lambda,
        mask_mode: match args.mask_mode {
            ModeArg::Binary => MaskMode::Binary,
            ModeArg::Heated => MaskMode::Heated,
            ModeArg::SceneBuffer => MaskMode::SceneBuffer,
        },
        heat_buffer: args.b,
        heat_with_lambda: args.heat_with_lambda,
        ring_width: args.ring_width,
        buffer_c: args.c,
        ring_source: match args.ring_source {
            RingArg::Ddpm => RingSource::Ddpm,
            RingArg::LambdaBlend => RingSource::LambdaBlend,
        },
        seed: args.seed,
        candidates: args.candidates,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `out.png` for one candidate, `out.0.png`, `out.1.png`, ... for several.
fn candidate_path(out: &Path, index: usize, count: usize) -> PathBuf {
    if count == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{index}"),
    };
    out.with_file_name(name)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let cfg = run_config(&args)?;
    let scene = load_png(&args.inputs.scene)?;
    let target = load_png(&args.inputs.target)?;
    let mask = load_mask(&args.inputs.mask)?;
    let spec = parse_denoiser(args.denoiser.denoiser.as_deref(), args.denoiser.timeout_secs)?;

    let started = Instant::now();
    let sched = make_linear_schedule(cfg.timesteps)?;
    let mut denoiser = spec.build(&sched, scene.shape())?;
    let outputs = run_candidates(&scene, &target, &mask, &cfg, &mut denoiser)?;
    drop(denoiser);

    let mut paths = Vec::new();
    for (k, out) in outputs.iter().enumerate() {
        let path = candidate_path(&args.out, k, outputs.len());
        save_png(&out.image, &path)?;
        paths.push(path.display().to_string());
    }
    let summary = json!({
        "outputs": paths,
        "config": cfg,
        "denoiser_calls": outputs.iter().map(|o| o.denoiser_calls).collect::<Vec<_>>(),
        "wall_time_ms": started.elapsed().as_secs_f64() * 1e3,
    });
    println!("{summary}");
    Ok(())
}

fn cmd_grid(args: GridArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.grid)
        .map_err(|e| input_error(format!("{}: {e}", args.grid.display())))?;
    let mut spec = GridSpec::from_json(&text)?;
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    if args.columns.is_some() {
        spec.columns = args.columns;
    }
    let cell_count = spec.cell_count()?;
    let scene = load_png(&args.inputs.scene)?;
    let target = load_png(&args.inputs.target)?;
    let mask = load_mask(&args.inputs.mask)?;
    let denoiser = parse_denoiser(args.denoiser.denoiser.as_deref(), args.denoiser.timeout_secs)?;
    let jobs = args.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    info!("grid {}: {cell_count} cells", args.grid.display());

    let inputs = GridInputs {
        scene: &scene,
        target: &target,
        mask: &mask,
        denoiser: &denoiser,
    };
    let manifest = run_grid(&spec, &inputs, &args.out_dir, jobs)?;
    let summary = json!({
        "cells": manifest.cells.len(),
        "succeeded": manifest.succeeded(),
        "manifest": args.out_dir.join(MANIFEST_FILE).display().to_string(),
        "montage": args.out_dir.join(MONTAGE_FILE).display().to_string(),
    });
    println!("{summary}");
    if manifest.succeeded() == 0 {
        return Err(Failure {
            code: EXIT_ALL_CELLS_FAILED,
            message: "every grid cell failed".into(),
        });
    }
    Ok(())
}

fn cmd_mask(tool: MaskTool) -> CmdResult {
    match tool {
        MaskTool::Heat { mask, b, out } => {
            let m = load_mask(&mask)?;
            let heat = heated_mask(&m, b)?;
            let values: Vec<u8> = heat
                .values()
                .iter()
                .map(|h| (h * 255.0).round() as u8)
                .collect();
            save_gray(&out, m.height(), m.width(), &values)?;
        }
        MaskTool::Dilate { mask, w, out } => {
            let m = load_mask(&mask)?;
            save_mask(&dilate_hole(&m, w), &out)?;
        }
        MaskTool::Ring { mask, w, out } => {
            let m = load_mask(&mask)?;
            let band = ring(&m, w);
            let values: Vec<u8> = band
                .members()
                .iter()
                .map(|&inside| if inside { 0 } else { 255 })
                .collect();
            save_gray(&out, m.height(), m.width(), &values)?;
        }
    }
    Ok(())
}

fn cmd_schedule_dump(timesteps: usize, jump_len: usize, resample: usize) -> CmdResult {
    let plan = jump_plan(timesteps, jump_len, resample)?;
    println!(
        "{}",
        json!({
            "visited": plan.visited(),
            "down_count": plan.down_count(),
            "up_count": plan.up_count(),
        })
    );
    Ok(())
}

fn protocol_failure(e: Error) -> Failure {
    Failure {
        code: EXIT_PROTOCOL,
        message: e.to_string(),
    }
}

fn cmd_denoiser_check(args: CheckArgs) -> CmdResult {
    let shape = Shape::new(args.channels, args.height, args.width);
    let sched = make_linear_schedule(args.timesteps)?;
    let expected = args
        .expect
        .as_deref()
        .map(|text| parse_denoiser(Some(text), args.timeout_secs))
        .transpose()?;
    if matches!(expected, Some(DenoiserSpec::External { .. })) {
        return Err(input_error("--expect takes an in-process backend"));
    }
    // The worker reconstructs the schedule from f32 betas.
    let mut reference = expected
        .map(|spec| spec.build(&sched.quantized_f32(), shape))
        .transpose()?;
    let timeout = Duration::from_secs_f64(args.timeout_secs);
    let mut session =
        ExternalDenoiser::handshake(&args.worker, &sched, shape, timeout).map_err(protocol_failure)?;

    let mut rng = SeededRng::new(args.seed);
    let mut probes = Vec::new();
    let mut all_match = true;
    let total = args.timesteps;
    for t in [total, total.div_ceil(2), 1] {
        let x_t = gaussian_draw(shape, &mut rng.substream(Purpose::Init, t));
        let eps = predict_epsilon(&mut session, &x_t, t).map_err(protocol_failure)?;
        let mut probe = json!({
            "t": t,
            "max_abs_eps": eps.data().iter().fold(0.0f32, |m, v| m.max(v.abs())),
        });
        if let Some(d) = reference.as_mut() {
            let want = d.epsilon(&x_t, t)?;
            let exact = want.bits_eq(&eps);
            all_match &= exact;
            probe["bitwise_match"] = json!(exact);
            probe["max_abs_diff"] = json!(want.max_abs_diff(&eps));
        }
        probes.push(probe);
    }
    let status = session.shutdown()?;
    let report = json!({
        "worker": args.worker,
        "shape": [shape.channels, shape.height, shape.width],
        "timesteps": args.timesteps,
        "handshake": "ok",
        "probes": probes,
        "worker_exit": status.code(),
    });
    println!("{report}");
    if !status.success() {
        return Err(Failure {
            code: EXIT_PROTOCOL,
            message: format!("worker exited with {status} after SHUTDOWN"),
        });
    }
    if !all_match {
        return Err(Failure {
            code: EXIT_BACKEND,
            message: "worker replies differ from the expected backend".into(),
        });
    }
    Ok(())
}

fn cmd_worker(args: WorkerArgs) -> CmdResult {
    let mode = match args.mode {
        WorkerKind::Oracle => {
            let path = args
                .reference
                .ok_or_else(|| input_error("oracle mode needs --ref"))?;
            WorkerMode::Oracle {
                reference: load_png(path)?,
            }
        }
        WorkerKind::Gaussian => WorkerMode::Gaussian {
            mu: args.mu,
            var: args.var,
        },
    };
    let fault = match args.fault {
        FaultArg::None => Fault::None,
        FaultArg::BadMagic => Fault::BadMagic,
        FaultArg::WrongShape => Fault::WrongShape,
        FaultArg::Silent => Fault::Silent,
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    serve(stdin, stdout, &mode, fault).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })
}
