//! The `demandcast` command line.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_attention, cmd_eval, cmd_explain, cmd_ingest, cmd_predict, cmd_simulate, cmd_train,
    eval_runs, parse_time_arg, write_comparison_csv, write_metrics_csv,
};
pub use config::{DataPaths, RunConfig};
pub use output::{ArtifactDigest, Manifest, Staging, MANIFEST_FILE, MANIFEST_FORMAT};

use crate::explain::ExplainError;
use crate::features::FeatureError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::synth::SynthError;
use crate::train::TrainError;

/// Failure reported as one `error code=... message=...` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: String = self
            .message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        write!(f, "error code={} message={}", self.code, flat)
    }
}

impl std::error::Error for CliError {}

macro_rules! error_code {
    ($($ty:ty => $code:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($code, e.to_string())
            }
        })*
    };
}

error_code! {
    IngestError => "ingest",
    FeatureError => "features",
    ModelError => "model",
    TrainError => "train",
    ExplainError => "explain",
    SynthError => "synth",
    csv::Error => "io",
    serde_json::Error => "format",
}

#[derive(Debug, Parser)]
#[command(name = "demandcast", version, about = "Day-ahead EV charging demand forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic grid, temperature and holiday CSVs.
    Simulate(SimulateArgs),
    /// Build the 15-minute series from raw CSVs.
    Ingest(IngestArgs),
    /// Train one variant and write checkpoints and metrics.
    Train(TrainArgs),
    /// Forecast the 96 steps after a timestamp from a checkpoint.
    Predict(PredictArgs),
    /// Grouped Shapley attributions for test windows against backgrounds.
    Explain(ExplainArgs),
    /// Train every variant for every seed and write a comparison table.
    Eval(EvalArgs),
    /// Hour-of-day profile of attention weights.
    Attention(AttentionArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub days: Option<usize>,
    /// First day, YYYY-MM-DD.
    #[arg(long)]
    pub start: Option<chrono::NaiveDate>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Raw sessions CSV (start,charge_end,disconnect,energy_kwh).
    #[arg(long, conflicts_with = "grid")]
    pub sessions: Option<PathBuf>,
    /// Pre-aggregated demand CSV (timestamp,demand).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<PathBuf>,
    #[arg(long)]
    pub holidays: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ingested series CSV.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<crate::train::Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub shuffle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// First forecast step; defaults to just after the series ends.
    #[arg(long, value_parser = parse_time_arg)]
    pub at: Option<chrono::NaiveDateTime>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Start of each test window (comma separated).
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_time_arg)]
    pub test: Vec<chrono::NaiveDateTime>,
    /// Start of each background window; several are averaged.
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_time_arg)]
    pub background: Vec<chrono::NaiveDateTime>,
    /// Attribute one forecast step instead of the mean of all steps.
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Seeds to average over (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

/// Caps the global rayon pool from `DEMANDCAST_THREADS`.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DEMANDCAST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::new("config", format!("DEMANDCAST_THREADS must be a positive integer, got `{raw}`")))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Attention(a) => cmd_attention(&a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            let message = first.trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::new("usage", message));
            return 1;
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}
