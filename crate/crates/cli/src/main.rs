//! `filmrestore`: synthesize degraded datasets, train, restore and score.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
//! missing inputs, invalid config).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filmrestore::degrade::Severity;

#[derive(Debug, Parser)]
#[command(name = "filmrestore", version, about = "Dust and scratch removal for film scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render procedural clean images as PNGs.
    Scenes(ScenesArgs),
    /// Overlay seeded dust and scratches on clean PNGs and write a dataset.
    Synth(SynthArgs),
    /// Train on a dataset written by `synth`.
    Train(TrainArgs),
    /// Restore PNGs with a trained generator.
    Infer(InferArgs),
    /// Score restored PNGs against references (PSNR / SSIM).
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ScenesArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of clean PNGs.
    #[arg(long)]
    pub clean_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// light, medium or heavy.
    #[arg(long, default_value = "medium")]
    pub severity: Severity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupted variants per clean image.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root (clean/, corrupted/, masks/).
    #[arg(long)]
    pub data: PathBuf,
    /// TOML training config; defaults apply to omitted fields.
    #[arg(long, conflicts_with = "resume")]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from; its stored config is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print a progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 10)]
    pub report_every: u64,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Training checkpoint or exported generator.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG (file input) or directory (directory input).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[arg(long, default_value_t = 16)]
    pub overlap: usize,
    #[arg(long, default_value_t = 5)]
    pub median_k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Where to write the TSV report.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Scenes(a) => commands::scenes(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
