//! Invariant suites bundled for the command line; each check carries its value and tolerance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::collapse::{compare, CollapseSpec};
use crate::approximations::{
    compute_potential_stats, curvature_expansion, delta_method_cov, delta_method_gap, lognormal_gap, lognormal_tv,
    mean_dataset_density, CurvatureSpec, LocalMinimum, PotentialAnchor,
};
use crate::averaging::{
    decomposition_check, effective_potential_gap_check, gap_direct, gap_upper_bound, gap_via_covariance,
    integrated_covariance, AveragingEnsemble, Observable,
};
use crate::data_sampling::{resample_datasets, sample_dataset, SamplingMode};
use crate::error::Result;
use crate::grid::{BoundaryPolicy, DensityGrid};
use crate::langevin::LangevinParams;
use crate::rng::derive_seed;
use crate::sgd::SgdConfig;
use crate::smooth::Quadratic;
use crate::stats::{combined_stderr, ks_against_cdf, Z_CRIT_1PCT};
use crate::steady_state::{
    boltzmann_auto, covering_geometry, probability_current, EffectivePotential, GridSpec,
};
use crate::toy_models::{LossModel, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Identities,
    SteadyState,
    Approximations,
    MomentumContrast,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Identities, Suite::SteadyState, Suite::Approximations, Suite::MomentumContrast];

    pub fn label(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::SteadyState => "steady_state",
            Suite::Approximations => "approximations",
            Suite::MomentumContrast => "momentum_contrast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(suite: Suite, name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            suite: suite.label().into(),
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `value ≥ tolerance`.
    pub fn at_least(suite: Suite, name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { passed: value >= tolerance, ..Self::at_most(suite, name, value, tolerance, detail) }
    }

    /// Passes when `value > tolerance` strictly.
    pub fn above(suite: Suite, name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { passed: value > tolerance, ..Self::at_most(suite, name, value, tolerance, detail) }
    }

    /// Informational entry that never fails.
    pub fn report(suite: Suite, name: impl Into<String>, value: f64, detail: impl Into<String>) -> Self {
        Self { passed: true, ..Self::at_most(suite, name, value, f64::NAN, detail) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::Identities => identity_checks(&IdentityConfig::default(), seed)?,
        Suite::SteadyState => steady_state_checks(&SteadyStateConfig::default(), seed)?,
        Suite::Approximations => approximation_checks(&ApproximationConfig::default(), seed)?,
        Suite::MomentumContrast => momentum_contrast_checks(&ContrastConfig::default(), seed)?,
    };
    Ok(VerifyReport { suite, seed, passed: checks.iter().all(|c| c.passed), checks })
}

/// GaussianMean ensemble settings for the exact identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityConfig {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
    pub replications: usize,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self { mean: 1.0, std: 1.0, n: 10, temperature: 0.01, alpha: 0.0, beta: 0.0, replications: 1000 }
    }
}

pub fn gaussian_mean_ensemble(cfg: &IdentityConfig, mode: SamplingMode, seed: u64) -> Result<AveragingEnsemble> {
    let model = LossModel::gaussian_mean(cfg.mean, cfg.std)?;
    let data = resample_datasets(&model, mode, cfg.n, cfg.n, cfg.replications, seed)?;
    let params = LangevinParams::rescaled(cfg.temperature, cfg.alpha, cfg.beta);
    AveragingEnsemble::sgd_boltzmann(&model, data, &params, &GridSpec::default())
}

pub fn identity_checks(cfg: &IdentityConfig, seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Identities;
    let ens = gaussian_mean_ensemble(cfg, SamplingMode::IidFresh, seed)?;
    let model = ens.model.clone();
    let mut out = Vec::new();
    let observables = [
        Observable::train_loss(&model),
        Observable::test_loss(&model),
        Observable::of_theta("theta", |th| th[0]),
        Observable::custom("theta_times_train_mean", |th, d| {
            th[0] * d.train.iter().map(|x| x[0]).sum::<f64>() / d.train.len() as f64
        }),
    ];
    for f in &observables {
        let d = decomposition_check(f, &ens)?;
        out.push(Check::at_most(
            s,
            format!("decomposition[{}]", f.name()),
            d.residual.abs(),
            3.0 * d.combined_stderr,
            format!("lhs={:.6e} rhs={:.6e}", d.lhs.value, d.rhs.value),
        ));
    }
    let c = integrated_covariance(&Observable::test_loss(&model), &ens)?;
    out.push(Check::at_most(
        s,
        "test_loss_covariance_vanishes",
        c.z_score().abs(),
        Z_CRIT_1PCT,
        format!("integral={:.6e} stderr={:.6e}", c.value, c.stderr),
    ));
    let gd = gap_direct(&ens)?;
    let gc = gap_via_covariance(&ens)?;
    out.push(Check::at_most(
        s,
        "gap_direct_vs_covariance",
        (gd.value - gc.value).abs(),
        3.0 * combined_stderr(gd.stderr, gc.stderr),
        format!("direct={:.6e}±{:.2e} covariance={:.6e}±{:.2e}", gd.value, gd.stderr, gc.value, gc.stderr),
    ));
    let bound = gap_upper_bound(&ens, 100_000, derive_seed(&[seed, 6]))?;
    out.push(Check::at_most(s, "gap_upper_bound", gc.value.abs(), bound, format!("bound={bound:.6e}")));
    let pg = effective_potential_gap_check(&ens)?;
    out.push(Check::at_least(
        s,
        "effective_potential_gap",
        pg.margin.value,
        -3.0 * pg.margin.stderr,
        format!("lhs={:.6e} rhs={:.6e}", pg.lhs.value, pg.rhs.value),
    ));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateConfig {
    pub n_train: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub samples: usize,
    pub ks_tolerance: f64,
    pub current_tolerance: f64,
    /// Nodes per density width for the current check.
    pub current_resolution: f64,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self {
            n_train: 100,
            lambda: 1e-2,
            batch_size: 1,
            alpha: SgdConfig::DEFAULT_ALPHA,
            samples: 100_000,
            ks_tolerance: 0.02,
            current_tolerance: 1e-4,
            current_resolution: 64.0,
        }
    }
}

/// The two one-dimensional models used for the stationary checks.
pub fn steady_state_models() -> Result<Vec<(&'static str, LossModel)>> {
    Ok(vec![
        ("gaussian_mean", LossModel::gaussian_mean(1.0, 1.0)?),
        ("nonlinear_regression", LossModel::nonlinear_regression(0.5, 0.5, 0.5)?),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryComparison {
    pub ks: f64,
    pub current: f64,
    pub current_refined: f64,
}

/// KS distance of SGD samples against the Boltzmann density, and the current before and after
/// halving the grid spacing.
pub fn stationary_comparison(
    model: &LossModel,
    train: &SampleSet,
    cfg: &SteadyStateConfig,
    seed: u64,
) -> Result<StationaryComparison> {
    let sgd = SgdConfig { alpha: cfg.alpha, seed, ..SgdConfig::plain(cfg.lambda, cfg.batch_size) };
    let params = LangevinParams::from(&sgd);
    let potential = EffectivePotential::new(model, train, &params)?;
    let density = boltzmann_auto(&potential, &GridSpec::default())?;
    let chains = 16;
    let init = potential.base().to_vec();
    let draws = crate::sgd::collect_samples(
        &sgd,
        model,
        train,
        &init,
        (20.0 / cfg.lambda).ceil() as u64,
        (3.0 / cfg.lambda).ceil() as u64,
        cfg.samples / chains,
        chains,
    )?;
    let xs: Vec<f64> = draws.iter().map(|x| x[0]).collect();
    let cdf = density.cdf_1d()?;
    let ks = ks_against_cdf(&xs, cdf);

    let spec = GridSpec { nodes_per_scale: cfg.current_resolution, ..GridSpec::default() };
    let geometry = covering_geometry(&[potential.extent(spec.rise)?], &spec)?;
    let current = current_on(&potential, &geometry, model, train, &params)?;
    let current_refined = current_on(&potential, &geometry.refined(2)?, model, train, &params)?;
    Ok(StationaryComparison { ks, current, current_refined })
}

fn current_on(
    potential: &EffectivePotential,
    geometry: &Arc<crate::grid::GridGeometry>,
    model: &LossModel,
    train: &SampleSet,
    params: &LangevinParams,
) -> Result<f64> {
    let rho: DensityGrid = potential.on_grid(geometry)?.density(params.temperature, BoundaryPolicy::Enforce)?;
    Ok(probability_current(&rho, model, train, params)?.max_interior_norm())
}

pub fn steady_state_checks(cfg: &SteadyStateConfig, seed: u64) -> Result<Vec<Check>> {
    let s = Suite::SteadyState;
    let mut out = Vec::new();
    for (k, (name, model)) in steady_state_models()?.into_iter().enumerate() {
        let data = sample_dataset(&model, SamplingMode::IidFresh, cfg.n_train, 1, derive_seed(&[seed, k as u64]))?;
        let r = stationary_comparison(&model, &data.train, cfg, derive_seed(&[seed, 100 + k as u64]))?;
        out.push(Check::at_most(s, format!("ks[{name}]"), r.ks, cfg.ks_tolerance, format!("{} samples", cfg.samples)));
        out.push(Check::at_most(s, format!("current[{name}]"), r.current, cfg.current_tolerance, ""));
        out.push(Check::at_least(
            s,
            format!("current_refinement[{name}]"),
            r.current / r.current_refined,
            2.0,
            format!("refined current {:.3e}", r.current_refined),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationConfig {
    pub n: usize,
    pub temperature: f64,
    pub replications: usize,
    /// Isotropic noise for the log-normal density check; β² ≫ s² makes g nearly Gaussian in the data.
    pub lognormal_beta: f64,
    pub lognormal_tv_tolerance: f64,
    pub lognormal_gap_tolerance: f64,
    pub delta_gap_tolerance: f64,
}

impl Default for ApproximationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            temperature: 0.5,
            replications: 4000,
            lognormal_beta: 3.0,
            lognormal_tv_tolerance: 0.01,
            lognormal_gap_tolerance: 0.25,
            delta_gap_tolerance: 0.35,
        }
    }
}

pub fn approximation_checks(cfg: &ApproximationConfig, seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Approximations;
    let mut out = Vec::new();

    let x2 = Quadratic { a: DMatrix::from_element(1, 1, 1.0), b: DVector::zeros(1), c: 0.0 };
    let cov = delta_method_cov(&x2, &x2, &[1.0], &DMatrix::from_element(1, 1, 0.01))?;
    out.push(Check::at_most(s, "delta_method_cov_square", (cov - 0.0399).abs(), 1e-12, format!("value={cov}")));

    let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let sigma = DMatrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.02]);
    let minimum = LocalMinimum {
        weight: 1.0,
        mean: DVector::from_vec(vec![0.1, -0.2]),
        covariance: sigma.clone(),
        train_minimizer: DVector::from_vec(vec![0.0, 0.0]),
        test_minimizer: DVector::from_vec(vec![0.2, 0.1]),
        train_loss: 0.1,
        test_loss: 0.3,
        train_hessian: c.clone(),
        test_hessian: c.clone(),
    };
    let e = curvature_expansion(&CurvatureSpec::new(vec![minimum.clone()])?);
    // Gaussian expectation of U₀ + ½(θ−θ*)ᵀC(θ−θ*) under N(μ, Σ).
    let direct = |u0: f64, centre: &DVector<f64>| {
        let d = &minimum.mean - centre;
        u0 + 0.5 * (&sigma * &c).trace() + 0.5 * (d.transpose() * &c * &d)[(0, 0)]
    };
    let err = (e.test - direct(0.3, &minimum.test_minimizer))
        .abs()
        .max((e.train - direct(0.1, &minimum.train_minimizer)).abs());
    out.push(Check::at_most(s, "curvature_expansion_quadratic", err, 1e-10, ""));

    let idc = IdentityConfig { n: cfg.n, temperature: cfg.temperature, replications: cfg.replications, ..Default::default() };
    let ens = gaussian_mean_ensemble(&idc, SamplingMode::IidFresh, seed)?;
    let stats = compute_potential_stats(&ens, PotentialAnchor::Normalized)?;
    out.push(Check::at_most(s, "potential_stats_identities", stats.identity_residual(), 1e-10, ""));
    let exact = gap_direct(&ens)?;
    let ln = lognormal_gap(&stats, &ens.rho_bar)?;
    out.push(Check::at_most(
        s,
        "lognormal_gap_relative_error",
        (ln.value - exact.value).abs() / exact.value.abs(),
        cfg.lognormal_gap_tolerance,
        format!("approx={:.6e} exact={:.6e}±{:.2e} regime={:?}", ln.value, exact.value, exact.stderr, ln.regime),
    ));
    let params = ens.params.expect("built from potentials");
    let at_mean = mean_dataset_density(&ens.model, &params, ens.geometry(), BoundaryPolicy::Ignore)?;
    let dg = delta_method_gap(&stats, &at_mean)?;
    out.push(Check::at_most(
        s,
        "delta_gap_relative_error",
        (dg.value - exact.value).abs() / exact.value.abs(),
        cfg.delta_gap_tolerance,
        format!("approx={:.6e} exact={:.6e}", dg.value, exact.value),
    ));

    let idc = IdentityConfig { beta: cfg.lognormal_beta, ..idc };
    let ens = gaussian_mean_ensemble(&idc, SamplingMode::IidFresh, derive_seed(&[seed, 1]))?;
    let stats = compute_potential_stats(&ens, PotentialAnchor::Normalized)?;
    let tv = lognormal_tv(&stats, &ens, BoundaryPolicy::Ignore)?;
    out.push(Check::at_most(s, "lognormal_density_tv", tv, cfg.lognormal_tv_tolerance, format!("beta={}", cfg.lognormal_beta)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastConfig {
    pub n_train: usize,
    pub plain_pairs: [(f64, usize); 2],
    pub momentum_temperature: f64,
    pub momentum_batches: [usize; 2],
    pub spec: CollapseSpec,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            plain_pairs: [(0.1, 500), (0.02, 100)],
            momentum_temperature: 1e-2,
            momentum_batches: [10, 100],
            spec: CollapseSpec::default(),
        }
    }
}

pub fn momentum_contrast_checks(cfg: &ContrastConfig, seed: u64) -> Result<Vec<Check>> {
    let s = Suite::MomentumContrast;
    let model = LossModel::gaussian_mean(1.0, 1.0)?;
    let data = sample_dataset(&model, SamplingMode::IidFresh, cfg.n_train, 1, seed)?;
    let init = model.landscape(&data.train)?.regularized_minimizer(SgdConfig::DEFAULT_ALPHA)?;
    let plain = |(l, b): (f64, usize), k: u64| SgdConfig { seed: derive_seed(&[seed, k]), ..SgdConfig::plain(l, b) };
    let r = compare(&plain(cfg.plain_pairs[0], 1), &plain(cfg.plain_pairs[1], 2), &model, &data.train, &init, &cfg.spec)?;
    let mut out = vec![Check::at_most(
        s,
        "plain_collapse",
        r.tv,
        r.tolerance,
        format!("T={:.3e} std {:.5} vs {:.5}, null TV {:?}", r.temperature_a, r.std_a, r.std_b, r.null_tv),
    )];
    let t = cfg.momentum_temperature;
    let mom = |b: usize, k: u64| SgdConfig { seed: derive_seed(&[seed, k]), ..SgdConfig::momentum(t * b as f64, b) };
    let r = compare(&mom(cfg.momentum_batches[0], 3), &mom(cfg.momentum_batches[1], 4), &model, &data.train, &init, &cfg.spec)?;
    let beyond = Check::above(
        s,
        "momentum_breaks_collapse",
        r.tv,
        r.tolerance,
        format!("T={t:.3e} std {:.5} vs {:.5}, null TV {:?}", r.std_a, r.std_b, r.null_tv),
    );
    out.push(beyond);
    Ok(out)
}
