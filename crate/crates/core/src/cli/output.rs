//! Report artifacts: report.json, report.csv and report.txt.

use super::{CliError, ExperimentConfig};
use crate::cache::{render_table, Comparison, PolicyKind, SimReport};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Column order of report.csv. Plotting scripts rely on it; append only.
pub const CSV_COLUMNS: [&str; 13] = [
    "policy",
    "percentile",
    "threshold",
    "accesses",
    "hits",
    "misses",
    "bypasses",
    "dirty_writebacks",
    "miss_rate",
    "avg_latency_us",
    "miss_rate_delta_pp",
    "latency_reduction_pct",
    "best",
];

/// One report.csv row. Field order matches [`CSV_COLUMNS`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub policy: PolicyKind,
    pub percentile: Option<f64>,
    pub threshold: Option<f64>,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub bypasses: u64,
    pub dirty_writebacks: u64,
    pub miss_rate: f64,
    pub avg_latency_us: f64,
    pub miss_rate_delta_pp: f64,
    pub latency_reduction_pct: f64,
    pub best: bool,
}

impl CsvRow {
    fn new(r: &SimReport, percentile: Option<f64>, delta_pp: f64, reduction: f64, best: bool) -> Self {
        Self {
            policy: r.policy,
            percentile,
            threshold: r.threshold,
            accesses: r.accesses,
            hits: r.hits,
            misses: r.misses,
            bypasses: r.bypasses,
            dirty_writebacks: r.dirty_writebacks,
            miss_rate: r.miss_rate,
            avg_latency_us: r.avg_latency_us,
            miss_rate_delta_pp: delta_pp,
            latency_reduction_pct: reduction,
            best,
        }
    }

    pub fn from_single(r: &SimReport, percentile: Option<f64>) -> Self {
        Self::new(r, percentile, 0.0, 0.0, false)
    }

    pub fn from_comparison(c: &Comparison, percentile: Option<f64>) -> Vec<Self> {
        let mut rows = vec![Self::new(&c.lru, percentile, 0.0, 0.0, false)];
        rows.extend(c.gmm.iter().map(|g| {
            Self::new(
                &g.report,
                percentile,
                g.miss_rate_delta_pp,
                g.latency_reduction_pct,
                g.report.policy == c.best,
            )
        }));
        rows
    }
}

#[derive(Debug, Serialize)]
pub(super) struct SimulateReport<'a> {
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    pub trace_sha256: &'a str,
    pub model_sha256: Option<&'a str>,
    pub percentile: Option<f64>,
    pub report: &'a SimReport,
}

#[derive(Debug, Serialize)]
pub(super) struct SweepPoint {
    pub percentile: f64,
    pub threshold: f64,
    pub comparison: Comparison,
}

#[derive(Debug, Serialize)]
pub(super) struct CompareReport<'a> {
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    pub trace_sha256: &'a str,
    pub model_sha256: &'a str,
    pub sweep: &'a [SweepPoint],
}

pub(super) fn csv_string(rows: &[CsvRow]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(format!("csv: {e}")))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(format!("csv: {e}"))
}

/// Text table for a comparison, with the reduction columns appended.
pub(super) fn comparison_text(c: &Comparison, percentile: f64, threshold: f64) -> String {
    let mut out = format!("percentile {percentile}  threshold {threshold:.6e}\n");
    out.push_str(&render_table(&c.reports()));
    for g in &c.gmm {
        let mark = if g.report.policy == c.best { "  (best)" } else { "" };
        let _ = writeln!(
            out,
            "{:<14} miss rate reduced {:.4} pp, latency reduced {:.2}% vs lru{mark}",
            g.report.policy.name(),
            g.miss_rate_delta_pp,
            g.latency_reduction_pct,
        );
    }
    out
}

pub(super) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub(super) fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}
