//! Command-line front end: dataset generation, training, evaluation, and
//! kernel/diagram inspection. Exit codes: 0 success, 2 usage or config
//! error, 1 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

/// Core errors raised while validating inputs are the caller's fault;
/// everything after setup is a runtime failure.
pub fn setup_err(e: snakeseg_core::Error) -> CliError {
    use snakeseg_core::Error::*;
    match e {
        InvalidArgument { .. } | ShapeMismatch { .. } | Format { .. } => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn run_err(e: snakeseg_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "snakeseg",
    about = "Tubular-structure segmentation with serpentine convolutions",
    after_help = config::config_help()
)]
struct Cli {
    /// Force single-threaded, bit-reproducible runs. Execution is already
    /// single-threaded and fully seeded; the flag pins the guarantee for
    /// scripts.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic tubular dataset: PGM + tensor pairs + manifest.
    Gen {
        /// Number of image/mask pairs (overrides data.n).
        #[arg(long)]
        n: Option<usize>,
        /// Base seed; item i is generated from seed + i (overrides data.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Image size as one side length or WIDTHxHEIGHT (overrides data.h/w).
        #[arg(long)]
        size: Option<String>,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Optional key=value config file for the data.* template knobs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key (repeatable), e.g. --set data.noise_sigma=0.1
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train on a generated dataset; even items train, odd items validate.
    Train {
        /// key=value config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Loss mode: ce | tc (overrides loss.mode).
        #[arg(long)]
        loss: Option<String>,
        /// Dataset directory (overrides data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for model.dsck and train_log.csv.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Override one config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on every item of a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Path the per-image CSV report is written to.
        #[arg(long)]
        report: PathBuf,
    },
    /// Export kernel traces, a prediction overlay, and optional diagrams.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (PGM).
        #[arg(long)]
        image: PathBuf,
        /// Pixel the traces are sampled at, as "x,y".
        #[arg(long)]
        point: Option<String>,
        /// Ground-truth mask (PGM) for the overlay label band and diagrams.
        #[arg(long)]
        label: Option<PathBuf>,
        /// Also dump persistence diagrams of prediction (and label if given).
        #[arg(long)]
        diagrams: bool,
        /// Output directory for the artifacts.
        #[arg(long, default_value = "inspect")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen { n, seed, size, out, config, sets } => {
            commands::gen(n, seed, size.as_deref(), &out, config.as_deref(), &sets)
        }
        Cmd::Train { config, loss, data, out, sets } => {
            commands::train(config.as_deref(), loss.as_deref(), data.as_deref(), &out, &sets)
        }
        Cmd::Eval { checkpoint, data, report } => commands::eval(&checkpoint, &data, &report),
        Cmd::Inspect { checkpoint, image, point, label, diagrams, out } => commands::inspect(
            &checkpoint,
            &image,
            point.as_deref(),
            label.as_deref(),
            diagrams,
            &out,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
