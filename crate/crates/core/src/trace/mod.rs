//! Memory-access traces: parsing, warm-up trimming, page indexing and the
//! window timestamp transform that turns requests into mixture-model samples.
//!
//! Text format, one request per line:
//!
//! ```text
//! # comment
//! r 0x1000
//! w 0x2fff
//! ```

mod synthetic;

pub use self::synthetic::{generate_synthetic, ClusterPattern, PageCluster, SyntheticTraceSpec};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};

/// SSD access granularity in bytes.
pub const PAGE_BYTES: u64 = 4096;
const PAGE_SHIFT: u32 = 12;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trimming {dropped} of {total} records leaves nothing")]
    TrimmedAway { total: usize, dropped: usize },
    #[error("invalid preprocessing config: {0}")]
    Config(String),
    #[error("invalid synthetic trace spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        matches!(self, AccessKind::Write)
    }

    fn symbol(self) -> char {
        match self {
            AccessKind::Read => 'r',
            AccessKind::Write => 'w',
        }
    }
}

/// One host memory request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub op: AccessKind,
    pub phys_addr: u64,
    /// Position in the trace, contiguous from 0.
    pub seq: u64,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:#x}", self.op.symbol(), self.phys_addr)
    }
}

/// A request reduced to mixture-model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sample {
    pub page_index: u64,
    /// Window index, always below `len_access_shot`.
    pub timestamp: u64,
    pub op: AccessKind,
}

impl Sample {
    /// Raw (page index, timestamp) feature pair.
    pub fn features(&self) -> [f64; 2] {
        [self.page_index as f64, self.timestamp as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub head_drop_frac: f64,
    pub tail_drop_frac: f64,
    pub len_window: u64,
    pub len_access_shot: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            head_drop_frac: 0.20,
            tail_drop_frac: 0.10,
            len_window: 32,
            len_access_shot: 10_000,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.head_drop_frac) || !frac_ok(self.tail_drop_frac) {
            return Err(TraceError::Config("drop fractions must lie in [0, 1)".into()));
        }
        if self.head_drop_frac + self.tail_drop_frac >= 1.0 {
            return Err(TraceError::Config("head_drop_frac + tail_drop_frac must be < 1".into()));
        }
        if self.len_window == 0 || self.len_access_shot == 0 {
            return Err(TraceError::Config("len_window and len_access_shot must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a text trace, keeping at most `limit` records when given.
pub fn parse_trace<R: BufRead>(input: R, limit: Option<usize>) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        if limit.is_some_and(|n| records.len() >= n) {
            break;
        }
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let (op, addr) = parse_line(line).map_err(|reason| TraceError::Parse { line: lineno, reason })?;
        records.push(TraceRecord {
            op,
            phys_addr: addr,
            seq: records.len() as u64,
        });
    }
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(records)
}

pub fn parse_trace_str(input: &str) -> Result<Vec<TraceRecord>, TraceError> {
    parse_trace(input.as_bytes(), None)
}

fn parse_line(line: &str) -> Result<(AccessKind, u64), String> {
    let mut fields = line.split_whitespace();
    let (Some(op), Some(addr), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(format!("expected `<r|w> <0xADDR>`, got `{line}`"));
    };
    let op = match op {
        "r" => AccessKind::Read,
        "w" => AccessKind::Write,
        other => return Err(format!("unknown op `{other}`")),
    };
    let hex = addr
        .strip_prefix("0x")
        .ok_or_else(|| format!("address `{addr}` is not 0x-prefixed"))?;
    let addr = u64::from_str_radix(hex, 16).map_err(|e| format!("bad address `{addr}`: {e}"))?;
    Ok((op, addr))
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

/// Drops the warm-up head and the tail of a trace and re-sequences the rest.
pub fn trim_warmup(records: &[TraceRecord], cfg: &PreprocessConfig) -> Result<Vec<TraceRecord>, TraceError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    let n = records.len();
    let head = floor_frac(cfg.head_drop_frac, n);
    let tail = floor_frac(cfg.tail_drop_frac, n);
    if head + tail >= n {
        return Err(TraceError::TrimmedAway { total: n, dropped: head + tail });
    }
    Ok(records[head..n - tail]
        .iter()
        .enumerate()
        .map(|(i, r)| TraceRecord { seq: i as u64, ..*r })
        .collect())
}

// The nudge keeps decimal fractions such as 0.29 * 100 from flooring to 28.
fn floor_frac(frac: f64, n: usize) -> usize {
    ((frac * n as f64) * (1.0 + 1e-12)).floor() as usize
}

pub fn page_index(phys_addr: u64) -> u64 {
    phys_addr >> PAGE_SHIFT
}

/// Window timestamp transform.
///
/// A request counter fills windows of `len_window` requests; each full window
/// advances the timestamp, which wraps to zero after `len_access_shot`
/// windows. Each sample carries the timestamp in effect once the counters have
/// been updated for its request.
pub fn assign_timestamps(records: &[TraceRecord], cfg: &PreprocessConfig) -> Result<Vec<Sample>, TraceError> {
    if cfg.len_window == 0 || cfg.len_access_shot == 0 {
        return Err(TraceError::Config("len_window and len_access_shot must be positive".into()));
    }
    let mut timestamp = 0u64;
    let mut index = 0u64;
    Ok(records
        .iter()
        .map(|r| {
            if index >= cfg.len_window {
                timestamp += 1;
                index = 0;
            }
            if timestamp >= cfg.len_access_shot {
                timestamp = 0;
            }
            index += 1;
            Sample {
                page_index: page_index(r.phys_addr),
                timestamp,
                op: r.op,
            }
        })
        .collect())
}

/// trim → page index → timestamps.
pub fn preprocess(records: &[TraceRecord], cfg: &PreprocessConfig) -> Result<Vec<Sample>, TraceError> {
    let trimmed = trim_warmup(records, cfg)?;
    assign_timestamps(&trimmed, cfg)
}
