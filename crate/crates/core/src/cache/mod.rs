//! Set-associative DRAM cache in front of an SSD, with write-back blocks and
//! flat SSD latencies.
//!
//! Policies:
//! - `Lru`: always allocate, evict the least recently used way.
//! - `GmmAdmission`: on a miss, bypass the cache when the mixture score is
//!   below the model threshold; otherwise behave like LRU.
//! - `GmmEviction`: always allocate, evict the way with the lowest score
//!   captured at fill time.
//! - `GmmBoth`: admission and eviction together.

mod compare;
mod report;

pub use self::compare::{compare_policies, latency_reduction_pct, Comparison, PolicyResult};
pub use self::report::{render_table, SimReport};

use crate::gmm::GmmModel;
use crate::trace::{Sample, PAGE_BYTES};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Largest page index reachable from a 64-bit byte address.
pub const MAX_PAGE_INDEX: u64 = u64::MAX >> 12;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("invalid cache config: {0}")]
    Config(String),
    #[error("policy {0} needs a model with a threshold")]
    MissingModel(PolicyKind),
    #[error("page index {0:#x} exceeds tag capacity")]
    PageOutOfRange(u64),
    #[error("no samples to simulate")]
    EmptyTrace,
    #[error("unknown policy `{0}` (expected lru, gmm-admission, gmm-eviction or gmm-both)")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceCharge {
    /// Inference runs alongside the SSD access; only the excess is charged.
    #[default]
    Overlapped,
    /// Inference latency is added to every scored miss.
    Additive,
}

/// Latencies in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub hit_us: f64,
    pub ssd_read_us: f64,
    pub ssd_write_us: f64,
    pub gmm_infer_us: f64,
    pub inference: InferenceCharge,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            hit_us: 1.0,
            ssd_read_us: 75.0,
            ssd_write_us: 900.0,
            gmm_infer_us: 3.0,
            inference: InferenceCharge::Overlapped,
        }
    }
}

impl LatencyModel {
    /// Extra cost of scoring a miss whose SSD access takes `ssd_us`.
    fn inference_overhead(&self, ssd_us: f64) -> f64 {
        match self.inference {
            InferenceCharge::Overlapped => (self.gmm_infer_us - ssd_us).max(0.0),
            InferenceCharge::Additive => self.gmm_infer_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub cache_bytes: u64,
    pub block_bytes: u64,
    pub associativity: usize,
    pub latency: LatencyModel,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            cache_bytes: 64 << 20,
            block_bytes: PAGE_BYTES,
            associativity: 8,
            latency: LatencyModel::default(),
        }
    }
}

impl CacheConfig {
    /// A config with `sets × ways` blocks and default latencies.
    pub fn with_geometry(sets: usize, ways: usize) -> Self {
        Self {
            cache_bytes: (sets * ways) as u64 * PAGE_BYTES,
            associativity: ways,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if self.block_bytes != PAGE_BYTES {
            return Err(CacheError::Config(format!("block_bytes must be {PAGE_BYTES}")));
        }
        if self.associativity == 0 {
            return Err(CacheError::Config("associativity must be positive".into()));
        }
        let set_bytes = self.block_bytes * self.associativity as u64;
        if self.cache_bytes == 0 || !self.cache_bytes.is_multiple_of(set_bytes) {
            return Err(CacheError::Config(format!(
                "cache_bytes {} is not a multiple of block_bytes × associativity = {set_bytes}",
                self.cache_bytes
            )));
        }
        if !(self.cache_bytes / set_bytes).is_power_of_two() {
            return Err(CacheError::Config("set count must be a power of two".into()));
        }
        let l = &self.latency;
        if [l.hit_us, l.ssd_read_us, l.ssd_write_us, l.gmm_infer_us].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CacheError::Config("latencies must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn set_count(&self) -> usize {
        (self.cache_bytes / (self.block_bytes * self.associativity as u64)) as usize
    }

    pub fn blocks(&self) -> usize {
        self.set_count() * self.associativity
    }
}

/// Splits a page index into (set index, tag).
pub fn locate(page_index: u64, set_count: usize) -> (usize, u64) {
    let sets = set_count as u64;
    ((page_index % sets) as usize, page_index / sets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Lru,
    GmmAdmission,
    GmmEviction,
    GmmBoth,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Lru,
        PolicyKind::GmmAdmission,
        PolicyKind::GmmEviction,
        PolicyKind::GmmBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Lru => "lru",
            PolicyKind::GmmAdmission => "gmm-admission",
            PolicyKind::GmmEviction => "gmm-eviction",
            PolicyKind::GmmBoth => "gmm-both",
        }
    }

    pub fn uses_model(self) -> bool {
        self != PolicyKind::Lru
    }

    fn admits_by_score(self) -> bool {
        matches!(self, PolicyKind::GmmAdmission | PolicyKind::GmmBoth)
    }

    fn evicts_by_score(self) -> bool {
        matches!(self, PolicyKind::GmmEviction | PolicyKind::GmmBoth)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CacheError::UnknownPolicy(s.to_owned()))
    }
}

/// A replacement policy, borrowing the model for the GMM variants.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'m> {
    Lru,
    GmmAdmission(&'m GmmModel),
    GmmEviction(&'m GmmModel),
    GmmBoth(&'m GmmModel),
}

impl<'m> Policy<'m> {
    pub fn new(kind: PolicyKind, model: Option<&'m GmmModel>) -> Result<Self, CacheError> {
        if kind == PolicyKind::Lru {
            return Ok(Policy::Lru);
        }
        let model = model.filter(|m| m.threshold().is_some()).ok_or(CacheError::MissingModel(kind))?;
        Ok(match kind {
            PolicyKind::GmmAdmission => Policy::GmmAdmission(model),
            PolicyKind::GmmEviction => Policy::GmmEviction(model),
            _ => Policy::GmmBoth(model),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Lru => PolicyKind::Lru,
            Policy::GmmAdmission(_) => PolicyKind::GmmAdmission,
            Policy::GmmEviction(_) => PolicyKind::GmmEviction,
            Policy::GmmBoth(_) => PolicyKind::GmmBoth,
        }
    }

    pub fn model(&self) -> Option<&'m GmmModel> {
        match *self {
            Policy::Lru => None,
            Policy::GmmAdmission(m) | Policy::GmmEviction(m) | Policy::GmmBoth(m) => Some(m),
        }
    }

    fn threshold(&self) -> f64 {
        self.model().and_then(GmmModel::threshold).unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CacheBlock {
    pub tag: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Access stamp for LRU ordering.
    pub stamp: u64,
    /// Mixture score captured when the block was filled.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Hit,
    MissFill,
    MissBypass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccessOutcome {
    pub kind: OutcomeKind,
    pub latency_us: f64,
    /// A dirty victim was written back.
    pub writeback: bool,
    /// Inference latency not hidden behind the SSD access.
    pub inference_overhead_us: f64,
}

/// Cache contents plus the access clock.
#[derive(Debug, Clone)]
pub struct CacheState {
    config: CacheConfig,
    sets: usize,
    ways: usize,
    blocks: Vec<CacheBlock>,
    clock: u64,
}

impl CacheState {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Self {
            config,
            sets: config.set_count(),
            ways: config.associativity,
            blocks: vec![CacheBlock::default(); config.blocks()],
            clock: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn set(&self, index: usize) -> &[CacheBlock] {
        &self.blocks[index * self.ways..(index + 1) * self.ways]
    }

    pub fn resident_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.valid).count()
    }

    pub fn contains(&self, page_index: u64) -> bool {
        let (set, tag) = locate(page_index, self.sets);
        self.set(set).iter().any(|b| b.valid && b.tag == tag)
    }

    pub fn access(&mut self, sample: &Sample, policy: &Policy<'_>) -> Result<AccessOutcome, CacheError> {
        if sample.page_index > MAX_PAGE_INDEX {
            return Err(CacheError::PageOutOfRange(sample.page_index));
        }
        let lat = self.config.latency;
        let kind = policy.kind();
        let is_write = sample.op.is_write();
        self.clock += 1;
        let clock = self.clock;
        let (set, tag) = locate(sample.page_index, self.sets);
        let base = set * self.ways;
        let ways = &mut self.blocks[base..base + self.ways];

        if let Some(block) = ways.iter_mut().find(|b| b.valid && b.tag == tag) {
            block.stamp = clock;
            block.dirty |= is_write;
            return Ok(AccessOutcome {
                kind: OutcomeKind::Hit,
                latency_us: lat.hit_us,
                writeback: false,
                inference_overhead_us: 0.0,
            });
        }

        let score = policy.model().map(|m| m.score(sample.features()));
        if kind.admits_by_score() && score.is_some_and(|s| s < policy.threshold()) {
            let ssd = if is_write { lat.ssd_write_us } else { lat.ssd_read_us };
            let overhead = lat.inference_overhead(ssd);
            return Ok(AccessOutcome {
                kind: OutcomeKind::MissBypass,
                latency_us: ssd + overhead,
                writeback: false,
                inference_overhead_us: overhead,
            });
        }

        let victim = match ways.iter().position(|b| !b.valid) {
            Some(w) => w,
            None if kind.evicts_by_score() => min_index_by(ways, |b| b.score),
            None => min_index_by(ways, |b| b.stamp as f64),
        };
        let writeback = ways[victim].valid && ways[victim].dirty;
        let overhead = if score.is_some() { lat.inference_overhead(lat.ssd_read_us) } else { 0.0 };
        let mut latency = lat.ssd_read_us + overhead;
        if writeback {
            latency += lat.ssd_write_us;
        }
        ways[victim] = CacheBlock {
            tag,
            valid: true,
            dirty: is_write,
            stamp: clock,
            score: score.unwrap_or(0.0),
        };
        debug_assert!(self.set_is_consistent(set));
        Ok(AccessOutcome {
            kind: OutcomeKind::MissFill,
            latency_us: latency,
            writeback,
            inference_overhead_us: overhead,
        })
    }

    fn set_is_consistent(&self, set: usize) -> bool {
        let blocks = self.set(set);
        blocks.iter().all(|b| b.valid || !b.dirty)
            && blocks
                .iter()
                .enumerate()
                .all(|(i, a)| !a.valid || blocks[i + 1..].iter().all(|b| !b.valid || b.tag != a.tag))
    }
}

// First minimum wins, so ties go to the lowest way.
fn min_index_by(ways: &[CacheBlock], key: impl Fn(&CacheBlock) -> f64) -> usize {
    let mut best = 0;
    let mut best_key = key(&ways[0]);
    for (i, b) in ways.iter().enumerate().skip(1) {
        let k = key(b);
        if k < best_key {
            best = i;
            best_key = k;
        }
    }
    best
}

/// Runs a policy over a trace, one access at a time.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    state: CacheState,
    policy: Policy<'m>,
    report: SimReport,
}

impl<'m> Simulator<'m> {
    pub fn new(config: CacheConfig, policy: Policy<'m>) -> Result<Self, CacheError> {
        Ok(Self {
            state: CacheState::new(config)?,
            report: SimReport::empty(policy.kind(), policy.model().and_then(GmmModel::threshold), config),
            policy,
        })
    }

    pub fn step(&mut self, sample: &Sample) -> Result<AccessOutcome, CacheError> {
        let out = self.state.access(sample, &self.policy)?;
        self.report.record(&out, sample.op.is_write());
        Ok(out)
    }

    pub fn state(&self) -> &CacheState {
        &self.state
    }

    pub fn finish(mut self) -> SimReport {
        self.report.finalize();
        self.report
    }
}

/// Simulates `samples` from a cold cache.
pub fn simulate(samples: &[Sample], config: &CacheConfig, policy: Policy<'_>) -> Result<SimReport, CacheError> {
    if samples.is_empty() {
        return Err(CacheError::EmptyTrace);
    }
    let mut sim = Simulator::new(*config, policy)?;
    for s in samples {
        sim.step(s)?;
    }
    Ok(sim.finish())
}
