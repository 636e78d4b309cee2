//! `gmmcache` command-line harness.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal numeric error.

mod commands;
mod config;
mod output;

pub use self::commands::{cmd_compare, cmd_gen_trace, cmd_simulate, cmd_train, load_samples, trace_fingerprint};
pub use self::config::{ExperimentConfig, TraceSource};
pub use self::output::{CsvRow, CSV_COLUMNS};

use crate::cache::CacheError;
use crate::gmm::GmmError;
use crate::trace::TraceError;
use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GmmError> for CliError {
    fn from(e: GmmError) -> Self {
        match e {
            GmmError::Numeric(_) | GmmError::NotPositiveDefinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::UnknownPolicy(_) | CacheError::MissingModel(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gmmcache", version, about = "GMM-driven DRAM cache simulator for SSD-backed memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonOpts {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// lru, gmm-admission, gmm-eviction or gmm-both.
    #[arg(long, global = true)]
    pub policy: Option<String>,
    /// Model file written by `train`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Threshold percentile, or a comma-separated list for a sweep.
    #[arg(long, global = true)]
    pub percentile: Option<String>,
    /// Keep only the first N trace records.
    #[arg(long, global = true)]
    pub max_records: Option<usize>,
    /// Trace file; replaces the config's trace source.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Skip the check that the model was trained on this trace.
    #[arg(long, global = true)]
    pub allow_mismatch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic trace from the config's `trace.synthetic` spec.
    GenTrace,
    /// Fit the mixture and pick the admission threshold.
    Train,
    /// Replay the trace under one policy.
    Simulate,
    /// Replay the trace under all four policies.
    Compare,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenTrace => cmd_gen_trace(&cli.opts),
        Command::Train => cmd_train(&cli.opts),
        Command::Simulate => cmd_simulate(&cli.opts),
        Command::Compare => cmd_compare(&cli.opts),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `"10"` or `"0,10,20"`.
pub fn parse_percentiles(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(|p| {
            let v: f64 = p.trim().parse().map_err(|_| CliError::Usage(format!("bad percentile `{p}`")))?;
            if !(0.0..=100.0).contains(&v) {
                return Err(CliError::Usage(format!("percentile {v} outside [0, 100]")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(values)
}
