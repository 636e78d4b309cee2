use super::{simulate, CacheConfig, CacheError, Policy, PolicyKind, SimReport};
use crate::gmm::GmmModel;
use crate::trace::Sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A GMM policy run measured against the LRU baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub report: SimReport,
    /// LRU miss rate minus this policy's, in percentage points.
    pub miss_rate_delta_pp: f64,
    pub latency_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub lru: SimReport,
    /// Admission, eviction and combined, in that order.
    pub gmm: Vec<PolicyResult>,
    /// GMM variant with the lowest miss rate.
    pub best: PolicyKind,
}

impl Comparison {
    pub fn best_result(&self) -> &PolicyResult {
        self.gmm
            .iter()
            .find(|r| r.report.policy == self.best)
            .expect("best policy is one of the gmm runs")
    }

    pub fn reports(&self) -> Vec<SimReport> {
        std::iter::once(self.lru.clone())
            .chain(self.gmm.iter().map(|r| r.report.clone()))
            .collect()
    }
}

/// (LRU − GMM) / LRU · 100; zero when the baseline latency is zero.
pub fn latency_reduction_pct(lru_avg_us: f64, gmm_avg_us: f64) -> f64 {
    if lru_avg_us == 0.0 {
        0.0
    } else {
        (lru_avg_us - gmm_avg_us) / lru_avg_us * 100.0
    }
}

/// Runs all four policies on the same samples.
pub fn compare_policies(samples: &[Sample], config: &CacheConfig, model: &GmmModel) -> Result<Comparison, CacheError> {
    let policies = PolicyKind::ALL
        .iter()
        .map(|&k| Policy::new(k, Some(model)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = policies
        .into_par_iter()
        .map(|p| simulate(samples, config, p))
        .collect::<Result<Vec<_>, _>>()?;
    let lru = reports.remove(0);
    let gmm: Vec<PolicyResult> = reports
        .into_iter()
        .map(|report| PolicyResult {
            miss_rate_delta_pp: (lru.miss_rate - report.miss_rate) * 100.0,
            latency_reduction_pct: latency_reduction_pct(lru.avg_latency_us, report.avg_latency_us),
            report,
        })
        .collect();
    let best = gmm
        .iter()
        .min_by(|a, b| {
            a.report
                .miss_rate
                .total_cmp(&b.report.miss_rate)
                .then(a.report.avg_latency_us.total_cmp(&b.report.avg_latency_us))
        })
        .expect("three gmm policies")
        .report
        .policy;
    Ok(Comparison { lru, gmm, best })
}
