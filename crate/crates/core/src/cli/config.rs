//! Experiment configuration file (TOML).
//!
//! Every section is optional and defaults to the reference setup: 64 MiB
//! cache of 4 KiB blocks, 8 ways, 256 components, 75/900 µs SSD latencies.
//!
//! ```toml
//! seed = 7
//! components = 64
//! percentile = 10.0
//!
//! [trace.synthetic]
//! n_records = 100000
//! write_fraction = 0.2
//! [[trace.synthetic.clusters]]
//! center = 40000
//! spread = 32768
//! weight = 1.0
//!
//! [cache]
//! associativity = 8
//! ```

use super::CliError;
use crate::cache::CacheConfig;
use crate::gmm::{EmConfig, DEFAULT_COMPONENTS};
use crate::trace::{PreprocessConfig, SyntheticTraceSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSource {
    /// Text trace, relative to the config file.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticTraceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub components: usize,
    /// Admission threshold percentile of training scores.
    pub percentile: f64,
    /// Leading share of processed samples used for training; the rest is
    /// simulated. 1.0 trains and simulates on the same samples.
    pub train_fraction: f64,
    pub max_records: Option<usize>,
    pub trace: TraceSource,
    pub preprocess: PreprocessConfig,
    pub em: EmConfig,
    pub cache: CacheConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            components: DEFAULT_COMPONENTS,
            percentile: 10.0,
            train_fraction: 1.0,
            max_records: None,
            trace: TraceSource::default(),
            preprocess: PreprocessConfig::default(),
            em: EmConfig::default(),
            cache: CacheConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Data(format!("config: {e}")))
    }

    /// Loads a config file; trace paths are made relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (cfg.trace.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Pins every seed to an explicit value so the echoed config replays exactly.
    pub fn resolve_seeds(&mut self, seed_override: Option<u64>) {
        if let Some(s) = seed_override {
            self.seed = s;
            self.em.init_seed = Some(s);
            if let Some(syn) = self.trace.synthetic.as_mut() {
                syn.rng_seed = Some(s);
            }
        }
        self.em.init_seed.get_or_insert(self.seed);
        if let Some(syn) = self.trace.synthetic.as_mut() {
            syn.rng_seed.get_or_insert(self.seed);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.trace.path, &self.trace.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::Data("trace: give either `path` or `synthetic`, not both".into()))
            }
            (None, None) => return Err(CliError::Data("trace: no source configured".into())),
            _ => {}
        }
        if let Some(syn) = &self.trace.synthetic {
            syn.validate()?;
        }
        if self.components == 0 {
            return Err(CliError::Data("components must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(CliError::Data(format!("percentile {} outside [0, 100]", self.percentile)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(CliError::Data("train_fraction must lie in (0, 1]".into()));
        }
        self.preprocess.validate()?;
        self.em.validate()?;
        self.cache.validate()?;
        Ok(())
    }
}
