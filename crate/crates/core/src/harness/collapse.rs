//! Whether stationary SGD distributions depend on (λ, B) only through T = λ/B.
//!
//! Samples are taken on a rescaled clock `t' = λ·steps` so that configurations with different
//! learning rates are compared after equal diffusion time. A distance counts as "different" only
//! beyond a tolerance calibrated from same-configuration, different-seed replicate pairs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sgd::{collect_samples, SgdConfig};
use crate::stats::{histogram, histogram_tv, mean, sample_std};
use crate::toy_models::{LossModel, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseSpec {
    pub samples: usize,
    pub chains: usize,
    /// Burn-in on the rescaled clock.
    pub burn_in_time: f64,
    /// Spacing between kept samples on the rescaled clock.
    pub thin_time: f64,
    pub bins: usize,
    /// Tolerance as a multiple of the mean replicate distance.
    pub null_multiplier: f64,
}

impl Default for CollapseSpec {
    fn default() -> Self {
        Self { samples: 200_000, chains: 16, burn_in_time: 20.0, thin_time: 3.0, bins: 40, null_multiplier: 3.0 }
    }
}

/// Step count for a rescaled duration. Heavy-ball momentum also remembers past gradients for
/// about `1/(1−μ)` steps, which sets a floor on the spacing when `λ` is large.
fn steps_for(cfg: &SgdConfig, duration: f64) -> u64 {
    let per_unit = (1.0 / cfg.lambda).max(1.0 / (1.0 - cfg.mu));
    (duration * per_unit).ceil().max(1.0) as u64
}

/// First coordinate of stationary samples for `cfg`.
pub fn stationary_samples(
    cfg: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    init: &[f64],
    spec: &CollapseSpec,
) -> Result<Vec<f64>> {
    if spec.chains == 0 || spec.samples < spec.chains {
        return Err(Error::InvalidArgument("need at least one sample per chain".into()));
    }
    let per_chain = spec.samples / spec.chains;
    let draws = collect_samples(
        cfg,
        model,
        train,
        init,
        steps_for(cfg, spec.burn_in_time),
        steps_for(cfg, spec.thin_time),
        per_chain,
        spec.chains,
    )?;
    Ok(draws.into_iter().map(|x| x[0]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseResult {
    pub temperature_a: f64,
    pub temperature_b: f64,
    /// Distance between the two configurations.
    pub tv: f64,
    /// Replicate distances for each configuration.
    pub null_tv: Vec<f64>,
    pub tolerance: f64,
    pub std_a: f64,
    pub std_b: f64,
}

impl CollapseResult {
    pub fn collapsed(&self) -> bool {
        self.tv <= self.tolerance
    }
}

/// Compares the stationary distributions of `a` and `b`, each replicated with a second seed.
pub fn compare(
    a: &SgdConfig,
    b: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    init: &[f64],
    spec: &CollapseSpec,
) -> Result<CollapseResult> {
    let reseed = |c: &SgdConfig| SgdConfig { seed: derive_seed(&[c.seed, 0x5eed]), ..c.clone() };
    let sets = [
        stationary_samples(a, model, train, init, spec)?,
        stationary_samples(&reseed(a), model, train, init, spec)?,
        stationary_samples(b, model, train, init, spec)?,
        stationary_samples(&reseed(b), model, train, init, spec)?,
    ];
    let pooled: Vec<f64> = sets.iter().flatten().copied().collect();
    let (mu, sd) = (mean(&pooled), sample_std(&pooled));
    let (lo, hi) = (mu - 5.0 * sd, mu + 5.0 * sd);
    let h: Vec<Vec<f64>> = sets.iter().map(|s| histogram(s, lo, hi, spec.bins)).collect();
    let null_tv = vec![histogram_tv(&h[0], &h[1]), histogram_tv(&h[2], &h[3])];
    Ok(CollapseResult {
        temperature_a: a.temperature(),
        temperature_b: b.temperature(),
        tv: histogram_tv(&h[0], &h[2]),
        tolerance: spec.null_multiplier * mean(&null_tv),
        null_tv,
        std_a: sample_std(&sets[0]),
        std_b: sample_std(&sets[2]),
    })
}
