use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use fovx_cli::manifest::{read_json, to_json_bytes};
use fovx_cli::pipeline::ExtendParams;
use fovx_cli::stages::{run_complete, run_evaluate, run_extend, run_phantom, run_simulate, EvalConfig};
use fovx_cli::{CliError, CliResult};
use fovx_core::bcstats::{anthro_ffm_fm, Anthro, Sex};
use fovx_core::fovsim::SimConfig;
use fovx_core::inpaint::SolverConfig;
use fovx_core::io::read_mask;
use fovx_core::metrics::{bbox_losses, giou, iou, tci, BBox, SeverityLevel, DEFAULT_GIOU_WEIGHT};
use fovx_core::phantom::PhantomConfig;

/// CT field-of-view extension pipeline on synthetic phantoms.
#[derive(Parser)]
#[command(name = "fovx", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON configuration for the stage.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue an interrupted run in --out started with identical parameters.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate elliptical body phantoms with tissue masks.
    Phantom {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Simulate FOV truncation on a phantom directory.
    Simulate {
        /// Phantom stage directory.
        #[arg(long)]
        input: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Estimate the body extent and extend the FOV border.
    Extend {
        /// Simulate stage directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        r0: Option<f64>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Inpaint the missing tissue of extended samples.
    Complete {
        /// Extend stage directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Severity-stratified error, agreement and correlation reports.
    Evaluate {
        /// Complete stage directory.
        #[arg(long)]
        input: PathBuf,
        /// Simulate stage directory holding the uncorrupted slices.
        #[arg(long)]
        truth: PathBuf,
        /// CSV with columns id,height_m,weight_kg,sex for correlation reports.
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Bootstrap seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// TCI of a body mask against a FOV mask (PGM files).
    Tci {
        #[arg(long)]
        body: PathBuf,
        #[arg(long)]
        fov: PathBuf,
    },
    /// IoU, GIoU and box losses of two boxes given as x_min,y_min,x_max,y_max.
    Giou {
        #[arg(long, allow_hyphen_values = true)]
        pred: String,
        #[arg(long, allow_hyphen_values = true)]
        gt: String,
        #[arg(long, default_value_t = DEFAULT_GIOU_WEIGHT)]
        lambda: f64,
    },
    /// Anthropometric fat-free and fat mass.
    Anthro {
        #[arg(long)]
        height: f64,
        #[arg(long)]
        weight: f64,
        #[arg(long)]
        sex: Sex,
    },
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map(read_json).transpose().map(Option::unwrap_or_default)
}

fn parse_box(s: &str) -> CliResult<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("bad box {s:?}: {e}")))?;
    match v[..] {
        [a, b, c, d] => Ok(BBox::new(a, b, c, d)?),
        _ => Err(CliError::input(format!("box {s:?} needs four comma-separated numbers"))),
    }
}

fn print<T: Serialize>(v: &T) -> CliResult<()> {
    print!("{}", String::from_utf8_lossy(&to_json_bytes(v)?));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    match cli.command {
        Command::Phantom { count, seed, stage } => {
            let cfg: PhantomConfig = config_or_default(stage.config.as_deref())?;
            let m = run_phantom(count, seed, &cfg, &stage.out, stage.resume)?;
            print(&m.summary)
        }
        Command::Simulate { input, seed, stage } => {
            let mut cfg: SimConfig = config_or_default(stage.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = run_simulate(&input, &cfg, &stage.out, stage.resume)?;
            print(&m.summary)
        }
        Command::Extend { input, r0, stage } => {
            let mut p: ExtendParams = config_or_default(stage.config.as_deref())?;
            if let Some(r0) = r0 {
                p.r0 = r0;
            }
            let m = run_extend(&input, &p, &stage.out, stage.resume)?;
            print(&m.summary)
        }
        Command::Complete { input, tol, stage } => {
            let mut cfg: SolverConfig = config_or_default(stage.config.as_deref())?;
            if let Some(t) = tol {
                cfg.tol = t;
            }
            let m = run_complete(&input, &cfg, &stage.out, stage.resume)?;
            print(&m.summary)
        }
        Command::Evaluate { input, truth, cohort, seed, stage } => {
            let mut cfg: EvalConfig = config_or_default(stage.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = run_evaluate(&input, &truth, cohort.as_deref(), &cfg, &stage.out, stage.resume)?;
            print(&m.summary)
        }
        Command::Tci { body, fov } => {
            let body = read_mask(&body).map_err(|e| CliError::from(e).context(body.display()))?;
            let fov = read_mask(&fov).map_err(|e| CliError::from(e).context(fov.display()))?;
            let t = tci(&body, &fov)?;
            print(&json!({ "tci": t, "severity": SeverityLevel::from_tci(t) }))
        }
        Command::Giou { pred, gt, lambda } => {
            let (p, g) = (parse_box(&pred)?, parse_box(&gt)?);
            let l = bbox_losses(&p, &g, lambda)?;
            print(&json!({ "iou": iou(&p, &g), "giou": giou(&p, &g), "mse": l.mse, "giou_loss": l.giou_loss, "total": l.total }))
        }
        Command::Anthro { height, weight, sex } => {
            let a = Anthro::new(height, weight, sex)?;
            let r = anthro_ffm_fm(&a)?;
            print(&json!({ "ffm": r.ffm, "fm": r.fm, "ffm_index": r.ffm_index, "fm_index": r.fm_index, "bmi": a.bmi() }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FOVX_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fovx: {e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
