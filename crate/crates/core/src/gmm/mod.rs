//! Two-dimensional Gaussian mixture over (page index, timestamp).
//!
//! Components live in standardized feature space; [`GmmModel::score`] takes
//! raw features, standardizes them and returns the mixture density there.
//! All densities are evaluated in log space.

mod em;
mod io;

pub use self::em::{fit_em, fit_em_standardized, responsibilities, EmConfig, TrainReport};
pub use self::io::{read_model, write_model, MODEL_HEADER};

use serde::{Deserialize, Serialize};

/// Default number of mixture components.
pub const DEFAULT_COMPONENTS: usize = 256;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, thiserror::Error)]
pub enum GmmError {
    #[error("covariance is not positive definite (pp={pp}, pt={pt}, tt={tt})")]
    NotPositiveDefinite { pp: f64, pt: f64, tt: f64 },
    #[error("invalid mixture weights: {0}")]
    InvalidWeights(String),
    #[error("invalid standardizer: {0}")]
    InvalidStandardizer(String),
    #[error("insufficient samples: {samples} samples for {k} components")]
    InsufficientSamples { samples: usize, k: usize },
    #[error("all samples are identical; cannot fit {k} components")]
    DegenerateData { k: usize },
    #[error("no samples")]
    EmptySamples,
    #[error("percentile {0} outside [0, 100]")]
    InvalidPercentile(f64),
    #[error("invalid EM config: {0}")]
    InvalidConfig(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Symmetric 2×2 covariance, stored once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub pp: f64,
    pub pt: f64,
    pub tt: f64,
}

impl Cov2 {
    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    pub fn diag(pp: f64, tt: f64) -> Self {
        Self { pp, pt: 0.0, tt }
    }

    pub fn det(&self) -> f64 {
        self.pp * self.tt - self.pt * self.pt
    }

    pub fn is_positive_definite(&self) -> bool {
        self.pp > 0.0 && self.tt > 0.0 && self.det() > 0.0 && self.det().is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    mean: [f64; 2],
    cov: Cov2,
    // Cached: inverse covariance entries and -ln(2π) - ½ln|Σ|.
    inv: [f64; 3],
    log_norm: f64,
}

impl Gaussian2 {
    pub fn new(mean: [f64; 2], cov: Cov2) -> Result<Self, GmmError> {
        if !cov.is_positive_definite() || !mean.iter().all(|m| m.is_finite()) {
            return Err(GmmError::NotPositiveDefinite { pp: cov.pp, pt: cov.pt, tt: cov.tt });
        }
        let det = cov.det();
        Ok(Self {
            mean,
            cov,
            inv: [cov.tt / det, -cov.pt / det, cov.pp / det],
            log_norm: -LN_2PI - 0.5 * det.ln(),
        })
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> Cov2 {
        self.cov
    }

    #[inline]
    pub fn log_pdf(&self, x: [f64; 2]) -> f64 {
        let dx = x[0] - self.mean[0];
        let dy = x[1] - self.mean[1];
        let maha = self.inv[0] * dx * dx + 2.0 * self.inv[1] * dx * dy + self.inv[2] * dy * dy;
        self.log_norm - 0.5 * maha
    }
}

/// Density of a 2D Gaussian at `x`.
pub fn gaussian_pdf(x: [f64; 2], mean: [f64; 2], cov: Cov2) -> Result<f64, GmmError> {
    Ok(Gaussian2::new(mean, cov)?.log_pdf(x).exp())
}

/// Per-feature affine map from raw to standardized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { mean: [0.0; 2], scale: [1.0; 2] }
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if !self.mean.iter().all(|m| m.is_finite()) || !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(GmmError::InvalidStandardizer(format!("{self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.mean[0]) / self.scale[0], (x[1] - self.mean[1]) / self.scale[1]]
    }
}

/// Population mean and deviation per feature; zero deviations become 1.
pub fn fit_standardizer(points: &[[f64; 2]]) -> Result<Standardizer, GmmError> {
    if points.len() < 2 {
        return Err(GmmError::InsufficientSamples { samples: points.len(), k: 2 });
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    let mut scale = [0.0; 2];
    for f in 0..2 {
        let m = points.iter().map(|p| p[f]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[f] - m).powi(2)).sum::<f64>() / n;
        mean[f] = m;
        scale[f] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    Ok(Standardizer { mean, scale })
}

/// Numerically stable running log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    #[inline]
    pub(crate) fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t > self.max {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.sum += (t - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Gaussian2>,
    standardizer: Standardizer,
    threshold: Option<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian2>, standardizer: Standardizer) -> Result<Self, GmmError> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(GmmError::InvalidWeights(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(GmmError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidWeights(format!("weights sum to {total}")));
        }
        standardizer.validate()?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            components,
            standardizer,
            threshold: None,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian2] {
        &self.components
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = Some(threshold);
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }

    /// log Σ πₖ N(z | µₖ, Σₖ) for an already standardized point.
    #[inline]
    pub fn log_density_standardized(&self, z: [f64; 2]) -> f64 {
        let mut acc = LogSumExp::new();
        for (lw, g) in self.log_weights.iter().zip(&self.components) {
            acc.push(lw + g.log_pdf(z));
        }
        acc.value()
    }

    pub fn score_standardized(&self, z: [f64; 2]) -> f64 {
        self.log_density_standardized(z).exp()
    }

    /// Mixture score G for raw (page index, timestamp) features.
    pub fn score(&self, raw: [f64; 2]) -> f64 {
        self.score_standardized(self.standardizer.apply(raw))
    }

    pub fn log_score(&self, raw: [f64; 2]) -> f64 {
        self.log_density_standardized(self.standardizer.apply(raw))
    }
}

/// Free-function form of [`GmmModel::score`].
pub fn mixture_score(raw: [f64; 2], model: &GmmModel) -> f64 {
    model.score(raw)
}

/// Mean per-sample log density of raw points.
pub fn log_likelihood(points: &[[f64; 2]], model: &GmmModel) -> Result<f64, GmmError> {
    if points.is_empty() {
        return Err(GmmError::EmptySamples);
    }
    let total: f64 = points.iter().map(|p| model.log_score(*p)).sum();
    Ok(total / points.len() as f64)
}

/// Nearest-rank percentile of `values` (sorted internally).
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64, GmmError> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(GmmError::InvalidPercentile(percentile));
    }
    if values.is_empty() {
        return Err(GmmError::EmptySamples);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Picks the admission threshold as the `percentile`-th training score and
/// stores it in the model.
pub fn select_threshold(model: &mut GmmModel, points: &[[f64; 2]], percentile: f64) -> Result<f64, GmmError> {
    let scores: Vec<f64> = points.iter().map(|p| model.score(*p)).collect();
    let threshold = nearest_rank(&scores, percentile)?;
    model.set_threshold(threshold);
    Ok(threshold)
}

/// Raw feature pairs for a slice of samples.
pub fn features(samples: &[crate::trace::Sample]) -> Vec<[f64; 2]> {
    samples.iter().map(|s| s.features()).collect()
}
