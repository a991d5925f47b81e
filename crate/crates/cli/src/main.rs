//! `tafa`: dataset generation, template search, rollouts, distillation,
//! certification, sweeps and the session service.
//!
//! Exit codes: 0 ok, 1 failed check (certify violations, failed sweep
//! cells), 2 usage, 3 data error.

mod certify;
mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tafa_core::TafaError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl From<TafaError> for CliError {
    fn from(e: TafaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "tafa", version, about = "Template-based active feature acquisition")]
pub struct Cli {
    /// Print one machine-readable JSON summary instead of human output
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for parallel sections
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML settings (a `[command]` table over top-level keys) or a run
    /// manifest to replay. Flags win over the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Default)]
pub struct DataArgs {
    /// Generate a CUBE dataset with this many rows
    #[arg(long)]
    pub cube: Option<usize>,
    /// CUBE noise level
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed for CUBE generation (defaults to --seed)
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// CSV file with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Two-column feature,cost CSV; unit costs when absent
    #[arg(long)]
    pub costs: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a CUBE dataset as CSV
    Generate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search a template library and package it as a policy bundle
    Search(SearchArgs),
    /// Run the policy on one instance
    Rollout(RolloutArgs),
    /// Distill a bundle's policy into decision trees with DAgger
    Distill(DistillArgs),
    /// Run the theory oracles; exits 1 on any violation
    Certify(CertifyArgs),
    /// Evaluate methods over a lambda grid and seeds
    Sweep(SweepArgs),
    /// Practical search against iterated mutation at equal candidate budgets
    Ablation(AblationArgs),
    /// Serve the session API for one or more bundles
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of templates
    #[arg(long = "T")]
    pub templates: Option<usize>,
    /// Candidates per round
    #[arg(long = "S")]
    pub candidates: Option<usize>,
    /// Mutation rounds after the initial greedy pass; 0 is greedy only
    #[arg(long = "R")]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial feature index
    #[arg(long, conflicts_with = "auto_init")]
    pub o_init: Option<usize>,
    /// Pick the initial feature by lowest mean single-feature loss (default)
    #[arg(long)]
    pub auto_init: bool,
    /// Neighbours stored in the bundle
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub drop_probability: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Row of the dataset given by --cube or --data, in raw units
    #[arg(long, conflicts_with = "values")]
    pub row: Option<usize>,
    /// Comma-separated raw feature values
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// per-cardinality, global or feature-act
    #[arg(long)]
    pub variant: Option<String>,
    /// Leaf limit per tree
    #[arg(long)]
    pub leaves: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Training rows used per DAgger iteration
    #[arg(long)]
    pub max_instances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CertifyArgs {
    /// Diminishing-returns trials per loss matrix
    #[arg(long)]
    pub trials: Option<usize>,
    /// Random instances for the greedy approximation bound
    #[arg(long)]
    pub bound_instances: Option<usize>,
    /// Toy distributions for the value bound chain
    #[arg(long)]
    pub toys: Option<usize>,
    /// Rows of the CUBE-derived loss matrix; 0 skips it
    #[arg(long)]
    pub cube_rows: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// low,high,step
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated: tafa-greedy, tafa-mutate, tafa-interp, static
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated seeds
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long = "T")]
    pub templates: Option<usize>,
    #[arg(long = "S")]
    pub candidates: Option<usize>,
    #[arg(long = "R")]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub leaves: Option<usize>,
    #[arg(long)]
    pub dagger_iterations: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated candidate budgets
    #[arg(long)]
    pub budgets: Option<String>,
    #[arg(long = "R")]
    pub rounds: Option<usize>,
    #[arg(long = "T")]
    pub templates: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Bundle file, optionally as id=path; repeatable
    #[arg(long)]
    pub bundle: Vec<String>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Write all sessions here on shutdown
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Directory for the run manifest
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Human lines unless `--json`, in which case only the final summary.
pub struct Output {
    pub json: bool,
}

impl Output {
    pub fn line(&self, s: impl AsRef<str>) {
        if !self.json {
            println!("{}", s.as_ref());
        }
    }

    pub fn summary(&self, v: &serde_json::Value) {
        if self.json {
            println!("{}", serde_json::to_string(v).unwrap_or_default());
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("usage error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = Output { json: cli.json };
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Generate { data, seed, out: dir } => commands::generate(&out, cfg, data, seed, dir),
        Command::Search(a) => commands::search(&out, cfg, a),
        Command::Rollout(a) => commands::rollout(&out, cfg, a),
        Command::Distill(a) => commands::distill(&out, cfg, a),
        Command::Certify(a) => certify::certify(&out, cfg, a),
        Command::Sweep(a) => commands::sweep(&out, cfg, a),
        Command::Ablation(a) => commands::ablation(&out, cfg, a),
        Command::Serve(a) => commands::serve(&out, cfg, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tafa: {e}");
            ExitCode::from(e.code())
        }
    }
}
