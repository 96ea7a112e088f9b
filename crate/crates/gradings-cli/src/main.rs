mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes are a stable contract: 0 success, 2 input error, 3 training
/// failure, 4 configuration mismatch.
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gradings",
    about = "Trajectory anomaly detection: segment densities aggregated into trajectory scores",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args, Default)]
pub struct CommonOverrides {
    /// Configuration file (flat key = value with [sections])
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// GeoLife root override
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Transportation mode of the normal class (car or bus)
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Region filter: lat_min,lat_max,lon_min,lon_max
    #[arg(long, global = true)]
    bbox: Option<String>,
    /// Segment window length W
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Model kind: maf, realnvp, gmm, lof
    #[arg(long, global = true)]
    model: Option<String>,
    /// Evaluation variant(s), comma separated: segment, average, median
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and filter the data source into a trajectory dataset artifact
    Ingest(CommonOverrides),
    /// Fit a model on a dataset artifact and serialize it
    Train(CommonOverrides),
    /// Score a dataset with a trained model (per-trajectory and per-segment CSV)
    Score(CommonOverrides),
    /// Evaluate a trained model: ROC/AUROC/FPR80 report
    Evaluate(CommonOverrides),
    /// Full pipeline: ingest, split, train, evaluate
    Experiment(CommonOverrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest(&args),
        Command::Train(args) => commands::train(&args),
        Command::Score(args) => commands::score(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Experiment(args) => commands::experiment(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
