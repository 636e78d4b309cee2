//! Seeded generator for clustered page-access traces.

use super::{AccessKind, TraceError, TraceRecord, PAGE_BYTES};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

/// How a cluster spreads its accesses over pages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterPattern {
    /// Uniform over `center ± spread`.
    #[default]
    Uniform,
    /// Gaussian with standard deviation `spread`, clamped at page 0.
    Normal,
    /// Sequential sweep over `center ± spread`, wrapping at the end.
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageCluster {
    pub center: u64,
    #[serde(default)]
    pub spread: u64,
    pub weight: f64,
    #[serde(default)]
    pub pattern: ClusterPattern,
    /// Half-open record ranges `[start, end)` during which the cluster is
    /// active. Empty means always active.
    #[serde(default)]
    pub active: Vec<[u64; 2]>,
}

impl PageCluster {
    fn is_active(&self, seq: u64) -> bool {
        self.active.is_empty() || self.active.iter().any(|&[lo, hi]| (lo..hi).contains(&seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceSpec {
    pub n_records: u64,
    pub clusters: Vec<PageCluster>,
    #[serde(default)]
    pub write_fraction: f64,
    /// Falls back to the experiment seed when absent.
    #[serde(default)]
    pub rng_seed: Option<u64>,
}

impl SyntheticTraceSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.clusters.is_empty() {
            return Err(TraceError::Spec("at least one cluster is required".into()));
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(TraceError::Spec("write_fraction must lie in [0, 1]".into()));
        }
        let mut total = 0.0;
        for (i, c) in self.clusters.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(TraceError::Spec(format!("cluster {i}: weight must be positive")));
            }
            if c.pattern != ClusterPattern::Normal && c.spread > c.center {
                return Err(TraceError::Spec(format!("cluster {i}: center - spread falls below page 0")));
            }
            if c.center.saturating_add(c.spread) > super::page_index(u64::MAX) {
                return Err(TraceError::Spec(format!("cluster {i}: pages exceed the address space")));
            }
            if c.active.iter().any(|&[lo, hi]| lo >= hi) {
                return Err(TraceError::Spec(format!("cluster {i}: empty activity window")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(TraceError::Spec(format!("cluster weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

struct ClusterSampler {
    lo: u64,
    width: u64,
    normal: Option<Normal<f64>>,
    cursor: u64,
}

impl ClusterSampler {
    fn new(c: &PageCluster) -> Self {
        let normal = (c.pattern == ClusterPattern::Normal)
            .then(|| Normal::new(c.center as f64, c.spread as f64).expect("finite non-negative std"));
        Self {
            lo: c.center.saturating_sub(c.spread),
            width: 2 * c.spread + 1,
            normal,
            cursor: 0,
        }
    }

    fn next_page(&mut self, pattern: ClusterPattern, rng: &mut ChaCha8Rng) -> u64 {
        match pattern {
            ClusterPattern::Uniform => self.lo + rng.random_range(0..self.width),
            ClusterPattern::Normal => {
                let x = self.normal.as_ref().expect("normal sampler").sample(rng).round();
                x.max(0.0) as u64
            }
            ClusterPattern::Scan => {
                let page = self.lo + self.cursor;
                self.cursor = (self.cursor + 1) % self.width;
                page
            }
        }
    }
}

/// Generates `spec.n_records` requests; identical specs give identical traces.
pub fn generate_synthetic(spec: &SyntheticTraceSpec, default_seed: u64) -> Result<Vec<TraceRecord>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed.unwrap_or(default_seed));
    let mut samplers: Vec<ClusterSampler> = spec.clusters.iter().map(ClusterSampler::new).collect();
    let always_on = spec.clusters.iter().all(|c| c.active.is_empty());

    let mut active: Vec<usize> = Vec::new();
    let mut chooser: Option<WeightedIndex<f64>> = None;
    let mut out = Vec::with_capacity(spec.n_records as usize);
    for seq in 0..spec.n_records {
        if chooser.is_none() || !always_on {
            let now: Vec<usize> = (0..spec.clusters.len()).filter(|&i| spec.clusters[i].is_active(seq)).collect();
            if now.is_empty() {
                return Err(TraceError::Spec(format!("no cluster is active at record {seq}")));
            }
            if chooser.is_none() || now != active {
                chooser = Some(
                    WeightedIndex::new(now.iter().map(|&i| spec.clusters[i].weight))
                        .map_err(|e| TraceError::Spec(e.to_string()))?,
                );
                active = now;
            }
        }
        let ci = active[chooser.as_ref().expect("chooser built").sample(&mut rng)];
        let page = samplers[ci].next_page(spec.clusters[ci].pattern, &mut rng);
        let offset = rng.random_range(0..PAGE_BYTES / 64) * 64;
        let op = if rng.random_bool(spec.write_fraction) {
            AccessKind::Write
        } else {
            AccessKind::Read
        };
        out.push(TraceRecord {
            op,
            phys_addr: page * PAGE_BYTES + offset,
            seq,
        });
    }
    Ok(out)
}
