//! Command-line workflows: search runs, latency reports, causality
//! certification, evaluation training, and synthetic data generation.
//! Every command writes its artifacts under a run directory together with
//! a manifest that pins the resolved configuration and input hashes.

mod commands;
mod config;
mod manifest;
mod train;

pub use config::{DataConfig, RunConfig, RunSection};
pub use manifest::{hash_file, read_manifest, write_manifest, RunManifest, SearchSummary};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::DeltaMode;
use crate::search::SearchError;

/// Exit codes: 0 success, 1 verification or validation failure, 2 usage or
/// config error, 3 runtime abort.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Config(_) => CliError::Usage(e.to_string()),
            SearchError::OverBudget { .. } => CliError::Failed(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn parse_delta_mode(s: &str) -> Result<DeltaMode, String> {
    DeltaMode::parse(s).ok_or_else(|| format!("expected `causal` or `symmetric`, got `{s}`"))
}

#[derive(Debug, Parser)]
#[command(
    name = "lcnas",
    version,
    about = "Latency-controlled architecture search for streaming acoustic models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the progressive architecture search described by a config file.
    Search(SearchArgs),
    /// Static algorithmic-latency report for a genotype.
    Latency(LatencyArgs),
    /// Certify a genotype's claimed lookahead by perturbation probing.
    Verify(VerifyArgs),
    /// Train an evaluation network built from a genotype.
    TrainEval(TrainEvalArgs),
    /// Generate a synthetic streaming classification dataset.
    GenData(GenDataArgs),
    /// Print the full default configuration as TOML.
    DumpConfig,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's run.out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the config's seed list, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Override the config's data.features path.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    /// Genotype JSON file.
    #[arg(long)]
    pub genotype: PathBuf,
    /// Total cells in the macro layout.
    #[arg(long)]
    pub cells: usize,
    /// Stem output channels.
    #[arg(long)]
    pub channels: usize,
    /// Causal stem convolution (default: centered).
    #[arg(long)]
    pub causal_stem: bool,
    /// Directory for the JSON report and manifest; the human-readable
    /// report prints to stdout regardless.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Genotype JSON file.
    #[arg(long)]
    pub genotype: PathBuf,
    /// Total cells in the macro layout.
    #[arg(long)]
    pub cells: usize,
    /// Stem output channels.
    #[arg(long)]
    pub channels: usize,
    /// Randomized probes per certification step.
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    /// Causal stem convolution (default: centered).
    #[arg(long)]
    pub causal_stem: bool,
    /// Output classes of the probe network.
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Probe rng seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Absolute output tolerance; zero demands bit-exact agreement.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Directory for the probe report and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainEvalArgs {
    /// Genotype JSON file.
    #[arg(long)]
    pub genotype: PathBuf,
    /// Total cells in the macro layout.
    #[arg(long)]
    pub cells: usize,
    /// Stem output channels.
    #[arg(long)]
    pub channels: usize,
    /// Feature file with training data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training epochs; 0 checkpoints the initialization.
    #[arg(long)]
    pub epochs: usize,
    /// Utterances per gradient step.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Cosine learning-rate schedule endpoints.
    #[arg(long, default_value_t = 0.05)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 0.002)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Shuffling, initialization, and split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Delta derivation applied when loading features.
    #[arg(long, default_value = "causal", value_parser = parse_delta_mode)]
    pub delta_mode: DeltaMode,
    /// Causal stem convolution (default: centered).
    #[arg(long)]
    pub causal_stem: bool,
    /// Fraction of utterances held out for validation.
    #[arg(long, default_value_t = 0.1)]
    pub holdout: f64,
    /// Previous train-eval run directory whose checkpoint seeds this run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Run directory for metrics, checkpoint, and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Label classes.
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Past frames in the labeling window.
    #[arg(long, default_value_t = 8)]
    pub past: usize,
    /// Future frames in the labeling window; 0 keeps the task causal.
    #[arg(long, default_value_t = 0)]
    pub future: usize,
    /// Utterances to generate.
    #[arg(long, default_value_t = 100)]
    pub utts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utterance length range in frames.
    #[arg(long, default_value_t = 96)]
    pub len_min: usize,
    #[arg(long, default_value_t = 160)]
    pub len_max: usize,
    /// Noise level mixed into the informative channel.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Run directory for features.lcnf and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

/// Execute a parsed command, mapping errors to their exit codes.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Search(a) => commands::cmd_search(&a),
        Command::Latency(a) => commands::cmd_latency(&a),
        Command::Verify(a) => commands::cmd_verify(&a),
        Command::TrainEval(a) => train::cmd_train_eval(&a),
        Command::GenData(a) => commands::cmd_gendata(&a),
        Command::DumpConfig => commands::cmd_dump_config(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
