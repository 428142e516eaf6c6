//! `stylebc` command-line driver.
//!
//! Each subcommand reads its inputs, merges flags over an optional JSON
//! [`RunConfig`](config::RunConfig), validates the result up front and
//! writes its artifacts under `--out`.
//!
//! Exit codes: `0` success, `1` runtime failure, `2` usage or configuration
//! error.

pub mod commands;
pub mod config;
pub mod server;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stylebc::training::Algorithm;

/// Bad invocation or invalid configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "stylebc", version, about = "Diverse behavioral cloning on 2D mazes")]
pub struct Cli {
    /// Run data-parallel loops on the current thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArg {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an expert dataset from a recipe.
    GenData(GenDataArgs),
    /// Precompute the trajectory dissimilarity matrix.
    Dissim(DissimArgs),
    /// Train a BC, ZBC or WZBC policy.
    Train(TrainArgs),
    /// Roll out a checkpoint and compare behavior histograms.
    Eval(EvalArgs),
    /// Property-conditioned generation.
    Control(ControlArgs),
    /// Export the weighted state density of a dataset.
    Density(DensityArgs),
    /// Parse and check a maze file.
    ValidateMaze(ValidateMazeArgs),
    /// Serve the REST/WebSocket API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Bundled recipe name (one_side, only_forward, only_forward_unbalanced) or JSON file.
    #[arg(long)]
    pub recipe: String,
    /// Maze name or file; defaults to the recipe's maze.
    #[arg(long)]
    pub maze: Option<String>,
    /// Overrides the recipe seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DissimArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_parser = parse_algorithm)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub maze: Option<String>,
    /// Precomputed dissimilarity matrix; computed from the dataset when absent.
    #[arg(long)]
    pub nu: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "relabel-p")]
    pub relabel_p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "log-every")]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct RolloutOpts {
    /// Environment preset for rollouts.
    #[arg(long, value_parser = parse_preset)]
    pub env: Option<String>,
    /// Sample actions instead of taking the mean.
    #[arg(long)]
    pub sample: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub rollouts: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub maze: Option<String>,
    #[command(flatten)]
    pub rollout: RolloutOpts,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Grid resolution of the exported rollout density.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub maze: Option<String>,
    #[command(flatten)]
    pub rollout: RolloutOpts,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub maze: Option<String>,
    #[arg(long)]
    pub nu: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Reference trajectory index.
    #[arg(long = "ref")]
    pub reference: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateMazeArgs {
    /// Maze name or file.
    #[arg(long)]
    pub maze: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub maze: Option<String>,
    /// Policy used by `/rollout`; recording works without one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset behind `/dataset/summary`, `/density` and property rollouts.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset file that saved sessions are appended to.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Default environment preset for new sessions.
    #[arg(long, value_parser = parse_preset)]
    pub env: Option<String>,
    /// Directory served at `/` (e.g. a built front-end bundle).
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_preset(s: &str) -> Result<String, String> {
    match stylebc::maze::EnvConfig::preset(s) {
        Some(_) => Ok(s.to_owned()),
        None => Err(format!(
            "unknown preset {s:?}; expected one of {}",
            stylebc::maze::EnvConfig::PRESETS.join(", ")
        )),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                2
            } else {
                eprintln!("error: {e:#}");
                1
            }
        }
    }
}
