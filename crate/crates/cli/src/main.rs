//! `vividet` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or file
//! format error, 4 numerical failure (divergence or a failed gradient
//! check).

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{AugArgs, CommonArgs, ModelArgs, TrainArgs, WorkerArgs};

/// A bad flag, config key or config value.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A gradient check whose error exceeded its tolerance.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Parser, Debug)]
#[command(
    name = "vividet",
    version,
    about = "Video violence classification with a spatio-temporal transformer"
)]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

// Parsed once per process, so the size of the largest variant is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic two-class dataset of .vclip files plus a manifest
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write checkpoints, history and a validation report
    Train(TrainCmd),
    /// Evaluate a checkpoint on a dataset directory
    Eval(EvalCmd),
    /// Classify one clip
    Predict(PredictCmd),
    /// Augment one clip and dump its frames as PNG
    AugmentPreview(AugmentPreviewCmd),
    /// Finite-difference check of the whole model's gradients on the tiny config
    Gradcheck(GradcheckCmd),
}

#[derive(Args, Debug)]
pub struct GenSyntheticArgs {
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Clips per class [default: 60]
    #[arg(long)]
    pub clips_per_class: Option<usize>,
    /// Frames per clip [default: 16]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame height [default: 32]
    #[arg(long)]
    pub height: Option<usize>,
    /// Frame width [default: 32]
    #[arg(long)]
    pub width: Option<usize>,
    /// Channels [default: 1]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Violent-to-calm speed ratio [default: 6]
    #[arg(long)]
    pub motion_gap: Option<f32>,
    /// Dataset seed; falls back to $VIVIDET_SEED, then 7
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    /// Dataset directory with violent/ and nonviolent/ subdirectories
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parent of the run directory [default: runs]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run directory name [default: run-<UTC timestamp>]
    #[arg(long)]
    pub run_name: Option<String>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub aug: AugArgs,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory with violent/ and nonviolent/ subdirectories
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; `.json` and `.txt` files are written [default: eval_report]
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Args, Debug)]
pub struct PredictCmd {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A .vclip file or a directory of frame images
    #[arg(long)]
    pub clip: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentPreviewCmd {
    /// Input .vclip file
    #[arg(long)]
    pub clip: PathBuf,
    /// Output directory for the augmented clip and its frames
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the PNG frame dump
    #[arg(long)]
    pub no_frames: bool,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub aug: AugArgs,
}

#[derive(Args, Debug)]
pub struct GradcheckCmd {
    /// Clips in the checked batch [default: 2]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Largest acceptable relative error [default: 0.001]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Central-difference step [default: 0.0001]
    #[arg(long)]
    pub step: Option<f64>,
    /// Seed for parameters and clips; falls back to $VIVIDET_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<NumericalFailure>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<vividet::Error>() {
            return match e {
                vividet::Error::InvalidArgument(_) => 2,
                vividet::Error::Divergence { .. } | vividet::Error::NonFinite { .. } | vividet::Error::Gradient(_) => 4,
                _ => 3,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::AugmentPreview(a) => commands::augment_preview(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
