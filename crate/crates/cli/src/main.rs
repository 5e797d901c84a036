//! Command-line front end for tuning, benchmark generation, sweeps and simulation.

// `!(x > y)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use lsmtune::Error;

#[derive(Debug, Parser)]
#[command(name = "lsmtune", version, about = "Tune LSM-tree size ratio, filter memory and compaction policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command", content = "args")]
pub enum Command {
    /// Tune for a workload, nominally or against a KL ball of radius --rho.
    Tune(TuneArgs),
    /// Sample a benchmark set of query-count tuples.
    BenchGen(BenchGenArgs),
    /// Compare nominal and robust tunings over a benchmark set.
    Sweep(SweepArgs),
    /// Run query sessions against a simulated tree built from a tuning.
    Simulate(SimulateArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TuneArgs {
    /// System description (JSON).
    pub system: PathBuf,
    /// Workload proportions `z0,z1,q,w`.
    #[arg(long)]
    pub workload: String,
    /// Uncertainty radius.
    #[arg(long, conflicts_with = "nominal", required_unless_present = "nominal")]
    pub rho: Option<f64>,
    /// Tune for the workload exactly.
    #[arg(long)]
    pub nominal: bool,
    /// Write the tuning here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json` or `lsmtune-tune.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchGenArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Counts are drawn uniformly from `1..=max_count`.
    #[arg(long, default_value_t = 10_000)]
    pub max_count: u64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    pub system: PathBuf,
    /// Benchmark set (JSON lines).
    #[arg(long)]
    pub bench: PathBuf,
    /// `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0:3.75:0.25")]
    pub rho_grid: String,
    /// `all` or comma-separated catalog indices.
    #[arg(long, default_value = "all")]
    pub catalog: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Skip the per-comparison CSV.
    #[arg(long)]
    pub summary_only: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub system: PathBuf,
    /// Tuning JSON as written by `tune`.
    #[arg(long)]
    pub tuning: PathBuf,
    /// Session list (JSON).
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Entries bulk-loaded before the first session; defaults to the system's entry count.
    #[arg(long)]
    pub entries: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Failures mapped to exit codes: 2 for usage and configuration problems,
/// 3 for infeasible or over-capacity setups.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_infeasible() {
            CliError::Infeasible(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Infeasible(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
