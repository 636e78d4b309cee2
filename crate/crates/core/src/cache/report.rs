use super::{AccessOutcome, CacheConfig, OutcomeKind, PolicyKind};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Counters and derived metrics for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: PolicyKind,
    pub accesses: u64,
    pub hits: u64,
    /// Includes bypassed accesses.
    pub misses: u64,
    pub bypasses: u64,
    pub dirty_writebacks: u64,
    pub miss_rate: f64,
    pub avg_latency_us: f64,
    pub fills: u64,
    /// Bypassed writes, charged at the SSD write latency.
    pub bypassed_writes: u64,
    pub total_latency_us: f64,
    pub inference_overhead_us: f64,
    pub threshold: Option<f64>,
    pub config: CacheConfig,
}

impl SimReport {
    pub(super) fn empty(policy: PolicyKind, threshold: Option<f64>, config: CacheConfig) -> Self {
        Self {
            policy,
            accesses: 0,
            hits: 0,
            misses: 0,
            bypasses: 0,
            dirty_writebacks: 0,
            miss_rate: 0.0,
            avg_latency_us: 0.0,
            fills: 0,
            bypassed_writes: 0,
            total_latency_us: 0.0,
            inference_overhead_us: 0.0,
            threshold,
            config,
        }
    }

    pub(super) fn record(&mut self, out: &AccessOutcome, is_write: bool) {
        self.accesses += 1;
        self.total_latency_us += out.latency_us;
        self.inference_overhead_us += out.inference_overhead_us;
        match out.kind {
            OutcomeKind::Hit => self.hits += 1,
            OutcomeKind::MissFill => {
                self.misses += 1;
                self.fills += 1;
            }
            OutcomeKind::MissBypass => {
                self.misses += 1;
                self.bypasses += 1;
                self.bypassed_writes += u64::from(is_write);
            }
        }
        self.dirty_writebacks += u64::from(out.writeback);
    }

    pub(super) fn finalize(&mut self) {
        if self.accesses > 0 {
            self.miss_rate = self.misses as f64 / self.accesses as f64;
            self.avg_latency_us = self.total_latency_us / self.accesses as f64;
        }
    }

    /// Latency rebuilt from the counters alone.
    pub fn expected_total_latency_us(&self) -> f64 {
        let l = &self.config.latency;
        let bypassed_reads = self.bypasses - self.bypassed_writes;
        self.hits as f64 * l.hit_us
            + self.fills as f64 * l.ssd_read_us
            + self.dirty_writebacks as f64 * l.ssd_write_us
            + bypassed_reads as f64 * l.ssd_read_us
            + self.bypassed_writes as f64 * l.ssd_write_us
            + self.inference_overhead_us
    }

    /// Same counters and latencies, ignoring the policy label and threshold.
    pub fn same_outcome(&self, other: &SimReport) -> bool {
        self.accesses == other.accesses
            && self.hits == other.hits
            && self.misses == other.misses
            && self.bypasses == other.bypasses
            && self.dirty_writebacks == other.dirty_writebacks
            && self.fills == other.fills
            && self.total_latency_us == other.total_latency_us
            && self.config == other.config
    }
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[SimReport]) -> String {
    let header = ["policy", "accesses", "hits", "misses", "bypasses", "writebacks", "miss_rate", "avg_latency_us"];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.policy.to_string(),
                r.accesses.to_string(),
                r.hits.to_string(),
                r.misses.to_string(),
                r.bypasses.to_string(),
                r.dirty_writebacks.to_string(),
                format!("{:.6}", r.miss_rate),
                format!("{:.4}", r.avg_latency_us),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
