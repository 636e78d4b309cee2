//! Expectation-Maximization training.
//!
//! Initialization is k-means++ seeding on a uniform subsample of at most
//! `20·K` points followed by one hard-assignment pass over all points. Each
//! iteration is an M-step (closed-form weight, mean and covariance updates,
//! plus `cov_floor` on the diagonal) followed by an E-step that scores the new
//! parameters. Training stops once the relative change in mean
//! log-likelihood drops below `rel_tol`.
//!
//! The E-step runs over fixed-size chunks in parallel and reduces the chunk
//! statistics in chunk order, so results do not depend on the thread count.

use super::{fit_standardizer, Cov2, Gaussian2, GmmError, GmmModel, Standardizer};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 4096;
const EMPTY_COMPONENT_FRAC: f64 = 1e-10;
const SUBSAMPLE_PER_COMPONENT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub cov_floor: f64,
    /// Seeds initialization; unset means 0.
    pub init_seed: Option<u64>,
    pub n_init_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-4,
            cov_floor: 1e-6,
            init_seed: None,
            n_init_restarts: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), GmmError> {
        if self.max_iters == 0 {
            return Err(GmmError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(GmmError::InvalidConfig("rel_tol must be positive".into()));
        }
        if !(self.cov_floor >= 0.0 && self.cov_floor.is_finite()) {
            return Err(GmmError::InvalidConfig("cov_floor must be finite and non-negative".into()));
        }
        if self.n_init_restarts == 0 {
            return Err(GmmError::InvalidConfig("n_init_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    /// Mean log-likelihood of the initial parameters followed by one entry
    /// per iteration.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    /// Components re-seeded because they lost all their mass.
    pub rescued_components: usize,
    /// Restart whose model was kept.
    pub restart: usize,
}

/// Fits a `k`-component mixture to raw feature points, standardizing first.
pub fn fit_em(points: &[[f64; 2]], k: usize, cfg: &EmConfig) -> Result<(GmmModel, TrainReport), GmmError> {
    check_inputs(points, k, cfg)?;
    let standardizer = if points.len() >= 2 {
        fit_standardizer(points)?
    } else {
        Standardizer { mean: points[0], scale: [1.0; 2] }
    };
    let z: Vec<[f64; 2]> = points.iter().map(|p| standardizer.apply(*p)).collect();
    fit_em_standardized(&z, standardizer, k, cfg)
}

/// Fits in the coordinates given; `standardizer` is only attached to the
/// resulting model.
pub fn fit_em_standardized(
    z: &[[f64; 2]],
    standardizer: Standardizer,
    k: usize,
    cfg: &EmConfig,
) -> Result<(GmmModel, TrainReport), GmmError> {
    check_inputs(z, k, cfg)?;
    let base_seed = cfg.init_seed.unwrap_or(0);
    let mut best: Option<(Params, TrainReport)> = None;
    for restart in 0..cfg.n_init_restarts {
        let (params, mut report) = run_once(z, k, cfg, base_seed.wrapping_add(restart as u64))?;
        report.restart = restart;
        if best.as_ref().is_none_or(|(_, b)| report.final_log_likelihood > b.final_log_likelihood) {
            best = Some((params, report));
        }
    }
    let (params, report) = best.expect("at least one restart");
    Ok((params.into_model(standardizer)?, report))
}

/// Posterior component probabilities of a raw point under `model`.
pub fn responsibilities(model: &GmmModel, raw: [f64; 2]) -> Vec<f64> {
    let mut buf = vec![0.0; model.k()];
    posterior(model, model.standardizer().apply(raw), &mut buf);
    buf
}

fn check_inputs(points: &[[f64; 2]], k: usize, cfg: &EmConfig) -> Result<(), GmmError> {
    cfg.validate()?;
    if k == 0 {
        return Err(GmmError::InvalidConfig("component count must be at least 1".into()));
    }
    if points.len() < k {
        return Err(GmmError::InsufficientSamples { samples: points.len(), k });
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(GmmError::Numeric("non-finite sample".into()));
    }
    if k > 1 && points.iter().all(|p| *p == points[0]) {
        return Err(GmmError::DegenerateData { k });
    }
    Ok(())
}

/// Fills `buf` with responsibilities and returns the log mixture density.
#[inline]
fn posterior(model: &GmmModel, z: [f64; 2], buf: &mut [f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for ((slot, lw), g) in buf.iter_mut().zip(&model.log_weights).zip(&model.components) {
        let t = lw + g.log_pdf(z);
        *slot = t;
        max = max.max(t);
    }
    if max == f64::NEG_INFINITY {
        buf.fill(0.0);
        return max;
    }
    let mut sum = 0.0;
    for slot in buf.iter_mut() {
        *slot = (*slot - max).exp();
        sum += *slot;
    }
    let inv = 1.0 / sum;
    for slot in buf.iter_mut() {
        *slot *= inv;
    }
    max + sum.ln()
}

#[derive(Debug, Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<[f64; 2]>,
    covs: Vec<Cov2>,
}

impl Params {
    fn into_model(self, standardizer: Standardizer) -> Result<GmmModel, GmmError> {
        let comps = self
            .means
            .iter()
            .zip(&self.covs)
            .map(|(m, c)| Gaussian2::new(*m, *c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| GmmError::Numeric(e.to_string()))?;
        GmmModel::new(self.weights, comps, standardizer).map_err(|e| GmmError::Numeric(e.to_string()))
    }
}

/// Sufficient statistics, with second moments taken about `centers`.
#[derive(Debug, Clone)]
struct Stats {
    log_lik: f64,
    nk: Vec<f64>,
    s1: Vec<[f64; 2]>,
    s2: Vec<[f64; 3]>,
}

impl Stats {
    fn zeros(k: usize) -> Self {
        Self {
            log_lik: 0.0,
            nk: vec![0.0; k],
            s1: vec![[0.0; 2]; k],
            s2: vec![[0.0; 3]; k],
        }
    }

    fn merge(&mut self, other: &Stats) {
        self.log_lik += other.log_lik;
        for j in 0..self.nk.len() {
            self.nk[j] += other.nk[j];
            self.s1[j][0] += other.s1[j][0];
            self.s1[j][1] += other.s1[j][1];
            for e in 0..3 {
                self.s2[j][e] += other.s2[j][e];
            }
        }
    }
}

fn e_step(z: &[[f64; 2]], model: &GmmModel, log_dens: &mut [f64]) -> Result<Stats, GmmError> {
    let k = model.k();
    let centers: Vec<[f64; 2]> = model.components.iter().map(Gaussian2::mean).collect();
    let partials: Vec<Stats> = z
        .par_chunks(CHUNK)
        .zip(log_dens.par_chunks_mut(CHUNK))
        .map(|(pts, dens)| {
            let mut st = Stats::zeros(k);
            let mut buf = vec![0.0; k];
            for (x, d) in pts.iter().zip(dens.iter_mut()) {
                let lse = posterior(model, *x, &mut buf);
                *d = lse;
                st.log_lik += lse;
                for (j, &r) in buf.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    let dx = x[0] - centers[j][0];
                    let dy = x[1] - centers[j][1];
                    st.nk[j] += r;
                    st.s1[j][0] += r * dx;
                    st.s1[j][1] += r * dy;
                    st.s2[j][0] += r * dx * dx;
                    st.s2[j][1] += r * dx * dy;
                    st.s2[j][2] += r * dy * dy;
                }
            }
            st
        })
        .collect();
    let mut total = Stats::zeros(k);
    for p in &partials {
        total.merge(p);
    }
    if !total.log_lik.is_finite() {
        return Err(GmmError::Numeric(format!("log-likelihood is {}", total.log_lik)));
    }
    Ok(total)
}

#[allow(clippy::needless_range_loop)]
fn m_step(
    stats: &Stats,
    centers: &[[f64; 2]],
    z: &[[f64; 2]],
    log_dens: &[f64],
    global_cov: Cov2,
    cov_floor: f64,
) -> (Params, usize) {
    let n = z.len() as f64;
    let k = stats.nk.len();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut empty = Vec::new();
    for j in 0..k {
        let nk = stats.nk[j];
        let d = [stats.s1[j][0] / nk, stats.s1[j][1] / nk];
        let cov = Cov2 {
            pp: stats.s2[j][0] / nk - d[0] * d[0] + cov_floor,
            pt: stats.s2[j][1] / nk - d[0] * d[1],
            tt: stats.s2[j][2] / nk - d[1] * d[1] + cov_floor,
        };
        if nk < EMPTY_COMPONENT_FRAC * n || !cov.is_positive_definite() {
            empty.push(j);
        }
        weights.push(nk / n);
        means.push([centers[j][0] + d[0], centers[j][1] + d[1]]);
        covs.push(cov);
    }
    if !empty.is_empty() {
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.sort_by(|&a, &b| log_dens[a].total_cmp(&log_dens[b]).then(a.cmp(&b)));
        for (slot, &j) in empty.iter().enumerate() {
            weights[j] = 1.0 / n;
            means[j] = z[order[slot % order.len()]];
            covs[j] = global_cov;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (Params { weights, means, covs }, empty.len())
}

fn population_cov(points: &[[f64; 2]]) -> ([f64; 2], [f64; 3]) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut s = [0.0; 3];
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        s[0] += dx * dx;
        s[1] += dx * dy;
        s[2] += dy * dy;
    }
    ([mx, my], [s[0] / n, s[1] / n, s[2] / n])
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn kmeanspp_seeds(z: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let m = z.len().min(SUBSAMPLE_PER_COMPONENT * k);
    let sub: Vec<[f64; 2]> = rand::seq::index::sample(rng, z.len(), m).iter().map(|i| z[i]).collect();
    let mut seeds = Vec::with_capacity(k);
    seeds.push(sub[rng.random_range(0..m)]);
    let mut d2: Vec<f64> = sub.iter().map(|p| sq_dist(*p, seeds[0])).collect();
    while seeds.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => sub[dist.sample(rng)],
            // Every subsample point coincides with a seed.
            Err(_) => sub[rng.random_range(0..m)],
        };
        for (d, p) in d2.iter_mut().zip(&sub) {
            *d = d.min(sq_dist(*p, next));
        }
        seeds.push(next);
    }
    seeds
}

fn initialize(z: &[[f64; 2]], k: usize, cov_floor: f64, global_cov: Cov2, rng: &mut ChaCha8Rng) -> Params {
    let seeds = kmeanspp_seeds(z, k, rng);
    let mut members: Vec<Vec<[f64; 2]>> = vec![Vec::new(); k];
    for p in z {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, s) in seeds.iter().enumerate() {
            let d = sq_dist(*p, *s);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        members[best].push(*p);
    }
    let n = z.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (j, pts) in members.iter().enumerate() {
        if pts.is_empty() {
            weights.push(1.0 / n);
            means.push(seeds[j]);
            covs.push(global_cov);
            continue;
        }
        let (mean, c) = population_cov(pts);
        let cov = Cov2 { pp: c[0] + cov_floor, pt: c[1], tt: c[2] + cov_floor };
        weights.push(pts.len() as f64 / n);
        means.push(mean);
        covs.push(if cov.is_positive_definite() { cov } else { global_cov });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Params { weights, means, covs }
}

fn run_once(z: &[[f64; 2]], k: usize, cfg: &EmConfig, seed: u64) -> Result<(Params, TrainReport), GmmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, g) = population_cov(z);
    let global_cov = Cov2 { pp: g[0] + cfg.cov_floor, pt: g[1], tt: g[2] + cfg.cov_floor };
    if !global_cov.is_positive_definite() {
        return Err(GmmError::Numeric("sample covariance is singular; raise cov_floor".into()));
    }

    let mut params = initialize(z, k, cfg.cov_floor, global_cov, &mut rng);
    let mut model = params.clone().into_model(Standardizer::identity())?;
    let mut log_dens = vec![0.0; z.len()];
    let n = z.len() as f64;

    let mut stats = e_step(z, &model, &mut log_dens)?;
    let mut history = vec![stats.log_lik / n];
    let mut converged = false;
    let mut iterations = 0;
    let mut rescued = 0;
    for it in 1..=cfg.max_iters {
        let centers: Vec<[f64; 2]> = params.means.clone();
        let (next, n_rescued) = m_step(&stats, &centers, z, &log_dens, global_cov, cfg.cov_floor);
        rescued += n_rescued;
        params = next;
        model = params.clone().into_model(Standardizer::identity())?;
        stats = e_step(z, &model, &mut log_dens)?;
        let prev = *history.last().expect("non-empty history");
        let ll = stats.log_lik / n;
        history.push(ll);
        iterations = it;
        let delta = (ll - prev).abs();
        if delta == 0.0 || delta < cfg.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    let report = TrainReport {
        iterations,
        final_log_likelihood: *history.last().expect("non-empty history"),
        log_likelihood: history,
        converged,
        rescued_components: rescued,
        restart: 0,
    };
    Ok((params, report))
}
