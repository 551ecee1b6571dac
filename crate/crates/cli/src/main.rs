//! `gaitfuse`: preprocessing, synthetic data, training, inference, reports.

mod commands;
mod exit;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gaitfuse",
    version,
    about = "RGB-D gait feature fusion and clinical reporting"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and synthetic data
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Frame-level worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Chat-completions base URL; enables LLM reports.
    #[arg(long, global = true)]
    pub llm_url: Option<String>,
    /// Output root (default: gaitfuse-out)
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Feature pyramid preset
    #[arg(long, global = true, value_enum)]
    pub dims: Option<DimsArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimsArg {
    Standard,
    Reduced,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw RGB + depth sequences to aligned, normalized GFT frames.
    Preprocess {
        /// Directory of raw sequences.
        #[arg(long)]
        input: PathBuf,
    },
    /// Write the synthetic feature dataset and labels.json.
    GenSynthetic,
    /// Train the fusion stack on a labeled feature dataset.
    Train {
        /// Feature dataset root (default: <out-dir>/features).
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Predict every frame of a feature dataset.
    Infer {
        #[arg(long)]
        features: Option<PathBuf>,
        /// Checkpoint directory (default: <out-dir>/checkpoint if present).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Turn predictions plus per-sequence metadata into clinical reports.
    Report {
        /// Predictions file (default: <out-dir>/predictions.json).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Root holding <seq>/meta.json (default: the feature dataset).
        #[arg(long)]
        meta_root: Option<PathBuf>,
    },
    /// Dump MLGE and neck intermediates of one frame as PGM heatmaps.
    Heatmap {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sequence name (default: the first).
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Time forward passes (standard dims unless --dims is given).
    Bench {
        #[arg(long, default_value_t = 5)]
        frames: usize,
    },
    /// Run the kernel oracle and gradient check suites.
    Selftest {
        /// Oracle instances per op.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Gradient check points per op.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
}

fn run(args: impl IntoIterator<Item = OsString>) -> Result<(), exit::Failure> {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(exit::Failure::usage(e.kind().to_string(), e.to_string())),
    };
    commands::dispatch(cli).map_err(exit::Failure::from)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.line());
            ExitCode::from(f.code)
        }
    }
}
