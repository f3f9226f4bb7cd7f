//! Continuous-time descriptions of SGD: Euler-Maruyama simulation and the moment equations.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data_sampling::DataSetPair;
use crate::error::{Error, Result};
use crate::langevin::LangevinParams;
use crate::linalg::{psd_sqrt, regularized};
use crate::rng::{derive_seed, rng_for, Rng, Stream};
use crate::smooth::Smooth;
use crate::stats::Estimate;
use crate::toy_models::{Landscape, LossModel, SampleSet, Split};

type VectorField<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a>;
type MatrixField<'a> = Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a>;

/// `dθ = f(θ)dt + G(θ)dW` with `G Gᵀ` the diffusion matrix.
pub struct DiffusionSpec<'a> {
    drift: VectorField<'a>,
    diffusion: MatrixField<'a>,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
}

impl<'a> DiffusionSpec<'a> {
    pub fn new(
        drift: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
        diffusion: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a,
        dt: f64,
        steps: u64,
        seed: u64,
    ) -> Self {
        Self { drift: Box::new(drift), diffusion: Box::new(diffusion), dt, steps, seed }
    }

    /// Drift `−λ(∂U+αθ)`, diffusion `λT(D+β²I)`.
    pub fn plain_sgd(
        model: &'a LossModel,
        train: &'a SampleSet,
        params: LangevinParams,
        dt: f64,
        steps: u64,
        seed: u64,
    ) -> Result<Self> {
        let land = model.landscape(train)?;
        let land2 = land.clone();
        Ok(Self::new(
            move |th| land.gradient(th).iter().zip(th).map(|(g, t)| -params.lambda * (g + params.alpha * t)).collect(),
            move |th| regularized(&land2.diffusion(th), params.beta) * (params.lambda * params.temperature),
            dt,
            steps,
            seed,
        ))
    }

    pub fn drift(&self, theta: &[f64]) -> Vec<f64> {
        (self.drift)(theta)
    }

    pub fn diffusion_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(theta)
    }
}

pub fn euler_maruyama_step(spec: &DiffusionSpec, theta: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    if !(spec.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let f = spec.drift(theta);
    let g = psd_sqrt(&spec.diffusion_matrix(theta))?;
    let z = DVector::from_iterator(theta.len(), (0..theta.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let noise = g * z * spec.dt.sqrt();
    Ok(theta.iter().zip(&f).zip(noise.iter()).map(|((t, f), n)| t + f * spec.dt + n).collect())
}

/// Full path of `spec.steps` steps from `theta0` (the initial point included).
pub fn simulate(spec: &DiffusionSpec, theta0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_for(spec.seed, Stream::Noise);
    let mut path = Vec::with_capacity(spec.steps as usize + 1);
    path.push(theta0.to_vec());
    let mut th = theta0.to_vec();
    for _ in 0..spec.steps {
        th = euler_maruyama_step(spec, &th, &mut rng)?;
        path.push(th.clone());
    }
    Ok(path)
}

/// Thinned stationary samples from `chains` independent Euler-Maruyama chains.
pub fn sample_stationary(
    spec: &DiffusionSpec,
    theta0: &[f64],
    burn_in: u64,
    thin: u64,
    per_chain: usize,
    chains: usize,
) -> Result<Vec<Vec<f64>>> {
    let per: Vec<Result<Vec<Vec<f64>>>> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(derive_seed(&[spec.seed, c]), Stream::Noise);
            let mut th = theta0.to_vec();
            for _ in 0..burn_in {
                th = euler_maruyama_step(spec, &th, &mut rng)?;
            }
            let mut out = Vec::with_capacity(per_chain);
            for _ in 0..per_chain {
                for _ in 0..thin.max(1) {
                    th = euler_maruyama_step(spec, &th, &mut rng)?;
                }
                out.push(th.clone());
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for p in per {
        all.extend(p?);
    }
    Ok(all)
}

/// Sign of the coupling between the θ and v noise in the momentum diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseCoupling {
    /// `G = [1; 1/λ] ⊗ √(λT) D^{1/2}`: both blocks are driven by `+dW`.
    #[default]
    InPhase,
    /// `G = [1; −1/λ] ⊗ √(λT) D^{1/2}`, the sign produced by the discrete update
    /// `θ ← θ − λv` when `v` absorbs the gradient noise.
    AntiPhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Diffusion of heavy-ball SGD in the state `s = (θ, v)`:
/// `dθ = −λ(μv + ∂U + αθ)dt + √(λT) D^{1/2} dW`,
/// `dv = ((μ−1)v + ∂U + αθ)dt ± (1/√B) D^{1/2} dW` with the same `dW`.
pub struct MomentumDiffusionSpec<'a> {
    gradient: VectorField<'a>,
    diffusion: MatrixField<'a>,
    pub lambda: f64,
    pub temperature: f64,
    pub mu: f64,
    pub alpha: f64,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
    pub coupling: NoiseCoupling,
}

impl<'a> MomentumDiffusionSpec<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'a,
        diffusion: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'a,
        lambda: f64,
        temperature: f64,
        mu: f64,
        alpha: f64,
        dt: f64,
        seed: u64,
    ) -> Self {
        Self {
            gradient: Box::new(gradient),
            diffusion: Box::new(diffusion),
            lambda,
            temperature,
            mu,
            alpha,
            dt,
            steps: 0,
            seed,
            coupling: NoiseCoupling::InPhase,
        }
    }

    pub fn for_sgd(model: &'a LossModel, train: &'a SampleSet, lambda: f64, batch_size: usize, mu: f64, alpha: f64, dt: f64, seed: u64) -> Result<Self> {
        let land = model.landscape(train)?;
        let land2 = land.clone();
        Ok(Self::new(
            move |th| land.gradient(th),
            move |th| land2.diffusion(th),
            lambda,
            lambda / batch_size as f64,
            mu,
            alpha,
            dt,
            seed,
        ))
    }

    pub fn with_coupling(mut self, coupling: NoiseCoupling) -> Self {
        self.coupling = coupling;
        self
    }

    /// Drift blocks `(f_θ, f_v)`.
    pub fn drift(&self, state: &MomentumState) -> (Vec<f64>, Vec<f64>) {
        let g = (self.gradient)(&state.theta);
        let force: Vec<f64> = g.iter().zip(&state.theta).map(|(g, t)| g + self.alpha * t).collect();
        let f_theta = force.iter().zip(&state.velocity).map(|(f, v)| -self.lambda * (self.mu * v + f)).collect();
        let f_v = force.iter().zip(&state.velocity).map(|(f, v)| (self.mu - 1.0) * v + f).collect();
        (f_theta, f_v)
    }

    /// Full `2p × 2p` diffusion matrix `C = [[λ, ±1], [±1, 1/λ]] ⊗ T D`.
    pub fn diffusion_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = (self.diffusion)(theta) * self.temperature;
        let p = theta.len();
        let s = self.coupling_sign();
        let mut c = DMatrix::zeros(2 * p, 2 * p);
        c.view_mut((0, 0), (p, p)).copy_from(&(&d * self.lambda));
        c.view_mut((0, p), (p, p)).copy_from(&(&d * s));
        c.view_mut((p, 0), (p, p)).copy_from(&(&d * s));
        c.view_mut((p, p), (p, p)).copy_from(&(&d / self.lambda));
        c
    }

    fn coupling_sign(&self) -> f64 {
        match self.coupling {
            NoiseCoupling::InPhase => 1.0,
            NoiseCoupling::AntiPhase => -1.0,
        }
    }
}

/// Noise increments of one momentum step, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumIncrement {
    pub theta_noise: Vec<f64>,
    pub velocity_noise: Vec<f64>,
}

pub fn momentum_langevin_step(spec: &MomentumDiffusionSpec, state: &MomentumState, rng: &mut Rng) -> Result<MomentumState> {
    momentum_langevin_step_traced(spec, state, rng).map(|(s, _)| s)
}

pub fn momentum_langevin_step_traced(
    spec: &MomentumDiffusionSpec,
    state: &MomentumState,
    rng: &mut Rng,
) -> Result<(MomentumState, MomentumIncrement)> {
    if !(spec.dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let p = state.theta.len();
    let (f_theta, f_v) = spec.drift(state);
    let root = psd_sqrt(&(spec.diffusion)(&state.theta))?;
    let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let shared = root * z * spec.dt.sqrt();
    let theta_noise: Vec<f64> = shared.iter().map(|w| (spec.lambda * spec.temperature).sqrt() * w).collect();
    let velocity_noise: Vec<f64> =
        shared.iter().map(|w| spec.coupling_sign() * (spec.temperature / spec.lambda).sqrt() * w).collect();
    let next = MomentumState {
        theta: (0..p).map(|i| state.theta[i] + f_theta[i] * spec.dt + theta_noise[i]).collect(),
        velocity: (0..p).map(|i| state.velocity[i] + f_v[i] * spec.dt + velocity_noise[i]).collect(),
    };
    Ok((next, MomentumIncrement { theta_noise, velocity_noise }))
}

/// Diffusion of the classical update `v ← μv − λ(g + αθ)`, `θ ← θ + v` in rescaled time
/// `t' = λt`. Inspection only: drift and noise factor, no simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalMomentumLangevin {
    pub lambda: f64,
    pub temperature: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl ClassicalMomentumLangevin {
    /// `(μ/λ · v − ∂U − αθ, (μ−1)/λ · v − ∂U − αθ)`.
    pub fn drift(&self, landscape: &Landscape, state: &MomentumState) -> (Vec<f64>, Vec<f64>) {
        let g = landscape.gradient(&state.theta);
        let f: Vec<f64> = g.iter().zip(&state.theta).map(|(g, t)| g + self.alpha * t).collect();
        (
            state.velocity.iter().zip(&f).map(|(v, f)| self.mu / self.lambda * v - f).collect(),
            state.velocity.iter().zip(&f).map(|(v, f)| (self.mu - 1.0) / self.lambda * v - f).collect(),
        )
    }

    /// `√T D^{1/2}`, multiplying the same `dW'` in both blocks.
    pub fn noise_factor(&self, landscape: &Landscape, theta: &[f64]) -> Result<DMatrix<f64>> {
        Ok(psd_sqrt(&landscape.diffusion(theta))? * self.temperature.sqrt())
    }
}

/// Monte Carlo estimate of `d⟨φ⟩/dt = −λ⟨∂φ·(∂U+αθ)⟩ + (λT/2)⟨Tr((D+β²)∂²φ)⟩` over `samples`.
pub fn observable_drift(
    phi: &dyn Smooth,
    samples: &[Vec<f64>],
    model: &LossModel,
    train: &SampleSet,
    params: &LangevinParams,
) -> Result<Estimate> {
    let land = model.landscape(train)?;
    drift_terms(phi, samples, &land, params).map(|terms| Estimate::from_samples(&terms))
}

fn drift_terms(phi: &dyn Smooth, samples: &[Vec<f64>], land: &Landscape, params: &LangevinParams) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let p = land.dim();
    samples
        .par_iter()
        .map(|th| {
            if th.len() != p {
                return Err(Error::DimensionMismatch { expected: p, got: th.len() });
            }
            let g = land.gradient(th);
            let dphi = phi.gradient(th);
            let transport: f64 = (0..p).map(|i| dphi[i] * (g[i] + params.alpha * th[i])).sum();
            let c = regularized(&land.diffusion(th), params.beta);
            let curvature = (c * phi.hessian(th)).trace();
            Ok(-params.lambda * transport + 0.5 * params.lambda * params.temperature * curvature)
        })
        .collect()
}

/// Drift of every entry of the covariance, `φ = (θ_i − m_i)(θ_j − m_j)` with `m` the sample mean.
/// Returned row-major.
pub fn covariance_drift(
    samples: &[Vec<f64>],
    model: &LossModel,
    train: &SampleSet,
    params: &LangevinParams,
) -> Result<Vec<Estimate>> {
    let land = model.landscape(train)?;
    let p = land.dim();
    let n = samples.len() as f64;
    let center: Vec<f64> = (0..p).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let mut out = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            let phi = crate::smooth::Quadratic::centered_product(&center, i, j);
            out.push(Estimate::from_samples(&drift_terms(&phi, samples, &land, params)?));
        }
    }
    Ok(out)
}

/// Drift of the train or test loss under the train-set dynamics:
/// `−λ(⟨∂U_s·∂U_ℓ⟩ + α⟨θ·∂U_s⟩) + (λT/2)⟨Tr(∂²U_s (D+β²))⟩`.
pub fn loss_ode_rhs(
    which: Split,
    samples: &[Vec<f64>],
    model: &LossModel,
    data: &DataSetPair,
    params: &LangevinParams,
) -> Result<Estimate> {
    let train = model.landscape(&data.train)?;
    let target = model.landscape(data.set(which))?;
    let phi = crate::smooth::FnSmooth {
        value: |th: &[f64]| target.loss(th),
        gradient: |th: &[f64]| target.gradient(th),
        hessian: |th: &[f64]| target.hessian(th),
    };
    drift_terms(&phi, samples, &train, params).map(|t| Estimate::from_samples(&t))
}
