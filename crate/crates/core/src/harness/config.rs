//! Sweep configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_sampling::SamplingMode;
use crate::error::{Error, Result};
use crate::toy_models::{Family, LossModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_population: Option<Family>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<LossModel> {
        let model = LossModel::new(self.family.clone())?;
        match &self.test_population {
            Some(p) => model.with_test_population(p.clone()),
            None => Ok(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(flatten)]
    pub mode: SamplingMode,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerVariant {
    #[default]
    Plain,
    Momentum,
    Cosine,
    MomentumCosine,
}

impl OptimizerVariant {
    pub fn has_momentum(self) -> bool {
        matches!(self, Self::Momentum | Self::MomentumCosine)
    }

    pub fn has_cosine(self) -> bool {
        matches!(self, Self::Cosine | Self::MomentumCosine)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Momentum => "momentum",
            Self::Cosine => "cosine",
            Self::MomentumCosine => "momentum_cosine",
        }
    }
}

fn default_alpha() -> f64 {
    crate::sgd::SgdConfig::DEFAULT_ALPHA
}

fn default_mu() -> f64 {
    crate::sgd::SgdConfig::DEFAULT_MU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default)]
    pub variant: OptimizerVariant,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self { variant: OptimizerVariant::Plain, alpha: default_alpha(), beta: 0.0, mu: default_mu() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningPair {
    pub lambda: f64,
    pub batch_size: usize,
}

impl LearningPair {
    pub fn temperature(&self) -> f64 {
        self.lambda / self.batch_size as f64
    }
}

/// Log-spaced temperatures at a fixed batch size, expanded into `λ = T·B` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureGrid {
    pub batch_size: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
}

impl TemperatureGrid {
    pub fn temperatures(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.t_min];
        }
        let (lo, hi) = (self.t_min.ln(), self.t_max.ln());
        (0..self.count).map(|k| (lo + (hi - lo) * k as f64 / (self.count - 1) as f64).exp()).collect()
    }
}

fn default_seeds() -> u64 {
    8
}
fn default_n_ref() -> u64 {
    300
}
fn default_t_ref() -> f64 {
    2e-4
}
fn default_window() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelSpec,
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub pairs: Vec<LearningPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_grid: Option<TemperatureGrid>,
    /// Seeds `base_seed .. base_seed + seeds` per pair; seed `s` fixes the data set, so every
    /// temperature sees the same data sets.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_n_ref")]
    pub n_ref: u64,
    #[serde(default = "default_t_ref")]
    pub t_ref: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Initial θ; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// All learning pairs, explicit ones first, then the temperature grid.
    pub fn learning_pairs(&self) -> Vec<LearningPair> {
        let mut out = self.pairs.clone();
        if let Some(g) = &self.temperature_grid {
            out.extend(g.temperatures().into_iter().map(|t| LearningPair { lambda: t * g.batch_size as f64, batch_size: g.batch_size }));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let model = self.model.build().map_err(|e| Error::Config(e.to_string()))?;
        let pairs = self.learning_pairs();
        if pairs.is_empty() {
            return bad("no (lambda, batch_size) pairs and no temperature grid".into());
        }
        for p in &pairs {
            if p.batch_size == 0 || !(p.lambda > 0.0) || !p.lambda.is_finite() {
                return bad(format!("pair (lambda={}, B={}) does not give a positive temperature", p.lambda, p.batch_size));
            }
        }
        if let Some(g) = &self.temperature_grid {
            if g.count == 0 || !(g.t_min > 0.0) || !(g.t_max >= g.t_min) {
                return bad("temperature grid needs 0 < t_min <= t_max and count >= 1".into());
            }
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.sampling.n_train == 0 || self.sampling.n_test == 0 {
            return bad("train and test sizes must be positive".into());
        }
        if !(self.t_ref > 0.0) || self.n_ref == 0 || self.window == 0 {
            return bad("n_ref, t_ref and window must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.alpha >= 0.0) || !(o.beta >= 0.0) || !(0.0..1.0).contains(&o.mu) {
            return bad("optimizer needs alpha, beta >= 0 and mu in [0, 1)".into());
        }
        if let Some(init) = &self.init {
            if init.len() != model.dim() {
                return bad(format!("init has {} coordinates, model has {}", init.len(), model.dim()));
            }
        }
        Ok(())
    }

    /// The GaussianMean reference sweep: 10 temperatures from 2e−5 to 2e−2 at B=10, 8 seeds.
    pub fn gaussian_mean_reference() -> Self {
        Self {
            model: ModelSpec { family: Family::GaussianMean { mean: 1.0, std: 1.0 }, test_population: None },
            sampling: SamplingSpec { mode: SamplingMode::IidFresh, n_train: 1000, n_test: 1000 },
            optimizer: OptimizerSpec::default(),
            pairs: Vec::new(),
            temperature_grid: Some(TemperatureGrid { batch_size: 10, t_min: 2e-5, t_max: 2e-2, count: 10 }),
            seeds: 8,
            base_seed: 0,
            n_ref: 300,
            t_ref: 2e-4,
            window: 50,
            init: None,
            output: None,
        }
    }
}
