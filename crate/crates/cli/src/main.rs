//! `ponzi`: batch runs of bytecode classification, scheme simulation,
//! attacks and impact metrics.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ponzi", version, about = "Smart-contract Ponzi forensics")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the corpus sweep (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Flag corpus contracts similar to known schemes.
    Classify(ClassifyArgs),
    /// Estimate the mean distance between unrelated contracts.
    Baseline(BaselineArgs),
    /// Run a scheme scenario and write its ledger trace.
    Simulate(ScenarioArgs),
    /// Run an attack scenario and write its report and trace.
    Attack(ScenarioArgs),
    /// Impact metrics of one scheme ledger.
    Analyze(AnalyzeArgs),
    /// Lifetime, creation and inequality tables over a set of schemes.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    /// Directory of `<address>.hex` files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of seed `.hex` files, or a JSONL manifest of corpus addresses.
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long, default_value_t = 0.35)]
    pub threshold: f64,
    /// Neighbour count above which a flagged contract is suspect.
    #[arg(long, default_value_t = 100)]
    pub fp_limit: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Metric)]
    pub normalization: NormArg,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = NormArg::Metric)]
    pub normalization: NormArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub txs: PathBuf,
    #[arg(long)]
    pub rates: PathBuf,
    #[arg(long)]
    pub scheme: String,
    /// Kind recorded in lifetime.csv and creation.csv.
    #[arg(long, value_enum, default_value_t = KindArg::Public)]
    pub kind: KindArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// JSONL scheme manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<address>.csv` ledgers.
    #[arg(long)]
    pub txs: PathBuf,
    #[arg(long)]
    pub rates: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    Metric,
    MaxLength,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Public,
    Hidden,
}

/// Failure with its exit status.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
