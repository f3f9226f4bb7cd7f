//! Discrete SGD: plain (with optional isotropic noise), heavy-ball momentum, and the cosine schedule.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_sampling::DataSetPair;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, Rng, Stream};
use crate::toy_models::{LossModel, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `λ_t = λ cos(πt / 2t_f)`.
    Cosine { horizon: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// B indices drawn uniformly with replacement at every step.
    #[default]
    WithReplacement,
    /// Every step uses the whole training set, in order (deterministic gradient descent).
    FullSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub schedule: Schedule,
    pub steps: u64,
    pub seed: u64,
    pub batching: Batching,
}

impl SgdConfig {
    pub const DEFAULT_ALPHA: f64 = 5e-4;
    pub const DEFAULT_MU: f64 = 0.9;

    pub fn plain(lambda: f64, batch_size: usize) -> Self {
        Self {
            lambda,
            batch_size,
            alpha: Self::DEFAULT_ALPHA,
            beta: 0.0,
            mu: 0.0,
            schedule: Schedule::Constant,
            steps: 0,
            seed: 0,
            batching: Batching::WithReplacement,
        }
    }

    pub fn momentum(lambda: f64, batch_size: usize) -> Self {
        Self { mu: Self::DEFAULT_MU, ..Self::plain(lambda, batch_size) }
    }

    /// `T = λ/B`, using the initial learning rate when a schedule is active.
    pub fn temperature(&self) -> f64 {
        self.lambda / self.batch_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be nonnegative", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument("alpha and beta must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::InvalidArgument(format!("momentum {} must lie in [0, 1)", self.mu)));
        }
        if let Schedule::Cosine { horizon } = self.schedule {
            if horizon < self.steps {
                return Err(Error::ScheduleOverrun { step: self.steps, horizon });
            }
        }
        Ok(())
    }

    fn lambda_at(&self, t: u64) -> Result<f64> {
        match self.schedule {
            Schedule::Constant => Ok(self.lambda),
            Schedule::Cosine { horizon } => cosine_lr(self.lambda, t, horizon),
        }
    }
}

pub fn temperature(config: &SgdConfig) -> f64 {
    config.temperature()
}

pub fn cosine_lr(lambda0: f64, t: u64, horizon: u64) -> Result<f64> {
    if t > horizon {
        return Err(Error::ScheduleOverrun { step: t, horizon });
    }
    if horizon == 0 {
        return Ok(lambda0);
    }
    let c = (std::f64::consts::FRAC_PI_2 * t as f64 / horizon as f64).cos();
    // cos(π/2) is 6e-17 in floating point; the schedule ends at exactly zero.
    Ok(if t == horizon { 0.0 } else { lambda0 * c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn at(theta: Vec<f64>) -> Self {
        let p = theta.len();
        Self { theta, velocity: vec![0.0; p], t: 0 }
    }
}

/// Independent generators for mini-batch indices and injected noise.
#[derive(Debug, Clone)]
pub struct SgdRng {
    batches: Rng,
    noise: Rng,
}

impl SgdRng {
    pub fn new(seed: u64) -> Self {
        Self { batches: rng_for(seed, Stream::Batches), noise: rng_for(seed, Stream::Noise) }
    }

    pub fn draw_batch(&mut self, n: usize, b: usize, out: &mut Vec<usize>) {
        out.clear();
        out.extend((0..b).map(|_| self.batches.random_range(0..n)));
    }

    fn draw_noise(&mut self, out: &mut [f64]) {
        for w in out {
            *w = self.noise.sample(StandardNormal);
        }
    }
}

fn batch_gradient(model: &LossModel, theta: &[f64], train: &SampleSet, batch: Option<&[usize]>, out: &mut [f64]) {
    let p = theta.len();
    let mut g = [0.0; 4];
    out.fill(0.0);
    let count = match batch {
        Some(idx) => {
            for &i in idx {
                model.gradient_into(theta, train.get(i), &mut g[..p]);
                for k in 0..p {
                    out[k] += g[k];
                }
            }
            idx.len()
        }
        None => {
            for x in train.iter() {
                model.gradient_into(theta, x, &mut g[..p]);
                for k in 0..p {
                    out[k] += g[k];
                }
            }
            train.len()
        }
    };
    out.iter_mut().for_each(|v| *v /= count as f64);
}

/// Plain update with an explicit batch (`None` = whole set) and noise vector.
pub fn apply_plain(
    state: &mut OptimizerState,
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    batch: Option<&[usize]>,
    noise: &[f64],
) -> Result<()> {
    let lr = config.lambda_at(state.t)?;
    let p = state.theta.len();
    let mut g = [0.0; 4];
    batch_gradient(model, &state.theta, train, batch, &mut g[..p]);
    let noise_scale = (lr * config.temperature()).sqrt() * config.beta;
    for k in 0..p {
        let th = state.theta[k];
        state.theta[k] = th - lr * g[k] - lr * config.alpha * th + noise_scale * noise[k];
    }
    state.t += 1;
    Ok(())
}

/// Heavy-ball update `v ← μv + g + αθ`, `θ ← θ − λv` with an explicit batch.
pub fn apply_momentum(
    state: &mut OptimizerState,
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    batch: Option<&[usize]>,
) -> Result<()> {
    let lr = config.lambda_at(state.t)?;
    let p = state.theta.len();
    let mut g = [0.0; 4];
    batch_gradient(model, &state.theta, train, batch, &mut g[..p]);
    for k in 0..p {
        state.velocity[k] = config.mu * state.velocity[k] + g[k] + config.alpha * state.theta[k];
        state.theta[k] -= lr * state.velocity[k];
    }
    state.t += 1;
    Ok(())
}

fn check_dims(state: &OptimizerState, model: &LossModel, train: &SampleSet) -> Result<()> {
    if state.theta.len() != model.dim() || state.velocity.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: state.theta.len() });
    }
    if train.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

pub fn step_plain(
    state: &OptimizerState,
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    rng: &mut SgdRng,
) -> Result<OptimizerState> {
    if config.mu != 0.0 {
        return Err(Error::InvalidArgument("plain step needs mu = 0".into()));
    }
    step_any(state, config, model, train, rng)
}

fn step_any(
    state: &OptimizerState,
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    rng: &mut SgdRng,
) -> Result<OptimizerState> {
    check_dims(state, model, train)?;
    let mut next = state.clone();
    let mut stepper = Stepper::new(config, model, train);
    stepper.step(&mut next, rng)?;
    Ok(next)
}

pub fn step_momentum(
    state: &OptimizerState,
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    rng: &mut SgdRng,
) -> Result<OptimizerState> {
    if config.mu <= 0.0 {
        return Err(Error::InvalidArgument("momentum step needs mu > 0".into()));
    }
    step_any(state, config, model, train, rng)
}

/// Reusable scratch for repeated steps; dispatches on `mu`.
struct Stepper<'a> {
    config: &'a SgdConfig,
    model: &'a LossModel,
    train: &'a SampleSet,
    batch: Vec<usize>,
    noise: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(config: &'a SgdConfig, model: &'a LossModel, train: &'a SampleSet) -> Self {
        Self { config, model, train, batch: Vec::with_capacity(config.batch_size), noise: vec![0.0; model.dim()] }
    }

    fn step(&mut self, state: &mut OptimizerState, rng: &mut SgdRng) -> Result<()> {
        let batch = match self.config.batching {
            Batching::WithReplacement => {
                rng.draw_batch(self.train.len(), self.config.batch_size, &mut self.batch);
                Some(self.batch.as_slice())
            }
            Batching::FullSet => None,
        };
        if self.config.mu > 0.0 {
            apply_momentum(state, self.config, self.model, self.train, batch)
        } else {
            if self.config.beta > 0.0 {
                rng.draw_noise(&mut self.noise);
            }
            apply_plain(state, self.config, self.model, self.train, batch, &self.noise)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Metrics at epoch 0 (initial point), 1, 2, ...
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub train_accuracy: Option<Vec<f64>>,
    pub test_accuracy: Option<Vec<f64>>,
    /// `(epoch, θ)` at the requested cadence.
    pub snapshots: Vec<(u64, Vec<f64>)>,
    pub diverged: bool,
    pub final_state: OptimizerState,
}

impl TrajectoryRecord {
    pub fn epochs_recorded(&self) -> usize {
        self.train_loss.len()
    }
}

/// Runs `config.steps` updates from `init`, recording metrics every `epoch_length` steps.
pub fn run(
    config: &SgdConfig,
    model: &LossModel,
    data: &DataSetPair,
    init: &[f64],
    epoch_length: u64,
    record_every: u64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if epoch_length == 0 {
        return Err(Error::InvalidArgument("epoch length must be at least 1".into()));
    }
    let mut state = OptimizerState::at(init.to_vec());
    check_dims(&state, model, &data.train)?;
    let train_view = model.landscape(&data.train)?;
    let test_view = model.landscape(&data.test)?;
    let classifier = model.is_classifier();
    let mut rec = TrajectoryRecord {
        train_loss: Vec::new(),
        test_loss: Vec::new(),
        train_accuracy: classifier.then(Vec::new),
        test_accuracy: classifier.then(Vec::new),
        snapshots: Vec::new(),
        diverged: false,
        final_state: state.clone(),
    };
    let record = |rec: &mut TrajectoryRecord, state: &OptimizerState, epoch: u64| -> bool {
        let tr = train_view.loss(&state.theta);
        let te = test_view.loss(&state.theta);
        if !tr.is_finite() || !te.is_finite() {
            return false;
        }
        rec.train_loss.push(tr);
        rec.test_loss.push(te);
        if let (Some(a), Some(b)) = (rec.train_accuracy.as_mut(), rec.test_accuracy.as_mut()) {
            a.push(model.accuracy(&state.theta, &data.train).unwrap_or(f64::NAN));
            b.push(model.accuracy(&state.theta, &data.test).unwrap_or(f64::NAN));
        }
        if record_every > 0 && epoch % record_every == 0 {
            rec.snapshots.push((epoch, state.theta.clone()));
        }
        true
    };
    if !record(&mut rec, &state, 0) {
        rec.diverged = true;
        return Ok(rec);
    }
    let mut rng = SgdRng::new(config.seed);
    let mut stepper = Stepper::new(config, model, &data.train);
    for s in 1..=config.steps {
        stepper.step(&mut state, &mut rng)?;
        if state.theta.iter().any(|t| !t.is_finite()) {
            rec.diverged = true;
            break;
        }
        if s % epoch_length == 0 && !record(&mut rec, &state, s / epoch_length) {
            rec.diverged = true;
            break;
        }
    }
    rec.final_state = state;
    Ok(rec)
}

/// Stationary samples of θ from `chains` independent runs, each burned in for `burn_in` steps and
/// thinned to one sample every `thin` steps. Chain `c` uses seed `derive_seed([config.seed, c])`.
pub fn collect_samples(
    config: &SgdConfig,
    model: &LossModel,
    train: &SampleSet,
    init: &[f64],
    burn_in: u64,
    thin: u64,
    per_chain: usize,
    chains: usize,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if matches!(config.schedule, Schedule::Cosine { .. }) {
        return Err(Error::InvalidArgument("stationary sampling needs a constant learning rate".into()));
    }
    let thin = thin.max(1);
    let per: Vec<Result<Vec<Vec<f64>>>> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut state = OptimizerState::at(init.to_vec());
            check_dims(&state, model, train)?;
            let mut rng = SgdRng::new(derive_seed(&[config.seed, c]));
            let mut stepper = Stepper::new(config, model, train);
            for _ in 0..burn_in {
                stepper.step(&mut state, &mut rng)?;
            }
            let mut out = Vec::with_capacity(per_chain);
            for _ in 0..per_chain {
                for _ in 0..thin {
                    stepper.step(&mut state, &mut rng)?;
                }
                if state.theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NonFinite("SGD chain diverged while sampling".into()));
                }
                out.push(state.theta.clone());
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(per_chain * chains);
    for chunk in per {
        all.extend(chunk?);
    }
    Ok(all)
}
