//! Approximate closed forms for the gap, its bounds, and the optimal temperature, measured
//! against the exact ensemble machinery.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{pointwise_std, AveragingEnsemble, Observable};
use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, DensityGrid, GridGeometry};
use crate::langevin::LangevinParams;
use crate::smooth::Smooth;
use crate::stats::Estimate;
use crate::steady_state::EffectivePotential;
use crate::toy_models::{min_eigenvalue, LossModel, Split};

/// Pointwise data-set statistics of the effective potential and the train loss (1/(m−1) estimators).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialStats {
    #[serde(skip)]
    pub geometry: Arc<GridGeometry>,
    pub temperature: f64,
    pub g_mean: Vec<f64>,
    pub g_var: Vec<f64>,
    pub v_mean: Vec<f64>,
    pub v_var: Vec<f64>,
    pub a_mean: Vec<f64>,
    pub a_var: Vec<f64>,
    pub va_cov: Vec<f64>,
    pub gu_cov: Vec<f64>,
    pub vu_cov: Vec<f64>,
    pub au_cov: Vec<f64>,
    /// Data-set mean of the train loss.
    pub u_mean: Vec<f64>,
    pub u_var: Vec<f64>,
}

fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

fn moments(x: &[&[f64]], y: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let m = x.len() as f64;
    let n = x[0].len();
    let mut mx = vec![0.0; n];
    let mut my = vec![0.0; n];
    for (a, b) in x.iter().zip(y) {
        for k in 0..n {
            mx[k] += a[k] / m;
            my[k] += b[k] / m;
        }
    }
    let mut cov = vec![0.0; n];
    for (a, b) in x.iter().zip(y) {
        for k in 0..n {
            cov[k] += (a[k] - mx[k]) * (b[k] - my[k]);
        }
    }
    cov.iter_mut().for_each(|c| *c /= m - 1.0);
    (mx, cov)
}

impl PotentialStats {
    /// Statistics from tabulated `v`, `a` and train-loss rows (one row per replication).
    pub fn from_rows(
        geometry: Arc<GridGeometry>,
        temperature: f64,
        v_rows: &[Vec<f64>],
        a_rows: &[Vec<f64>],
        u_rows: &[Vec<f64>],
    ) -> Result<Self> {
        let m = v_rows.len();
        if m < 2 {
            return Err(Error::Insufficient(format!("need at least 2 replications, have {m}")));
        }
        if a_rows.len() != m || u_rows.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: a_rows.len().min(u_rows.len()) });
        }
        let scale = 2.0 / temperature;
        let g_rows: Vec<Vec<f64>> =
            v_rows.iter().zip(a_rows).map(|(v, a)| v.iter().zip(a).map(|(v, a)| scale * v + a).collect()).collect();
        let (v, a, u, g) = (refs(v_rows), refs(a_rows), refs(u_rows), refs(&g_rows));
        let (v_mean, v_var) = moments(&v, &v);
        let (a_mean, a_var) = moments(&a, &a);
        let (g_mean, g_var) = moments(&g, &g);
        let (u_mean, u_var) = moments(&u, &u);
        let (_, va_cov) = moments(&v, &a);
        let (_, gu_cov) = moments(&g, &u);
        let (_, vu_cov) = moments(&v, &u);
        let (_, au_cov) = moments(&a, &u);
        Ok(Self {
            geometry,
            temperature,
            g_mean,
            g_var,
            v_mean,
            v_var,
            a_mean,
            a_var,
            va_cov,
            gu_cov,
            vu_cov,
            au_cov,
            u_mean,
            u_var,
        })
    }

    /// Largest violation of `σ_g² = (4/T²)σ_v² + σ_a² + (4/T)σ_va` and
    /// `σ_gu = (2/T)σ_vu + σ_au`, relative to the magnitude of the terms.
    pub fn identity_residual(&self) -> f64 {
        let t = self.temperature;
        let mut worst: f64 = 0.0;
        for k in 0..self.g_var.len() {
            let rhs = 4.0 / (t * t) * self.v_var[k] + self.a_var[k] + 4.0 / t * self.va_cov[k];
            let scale = 1.0 + 4.0 / (t * t) * self.v_var[k] + self.a_var[k];
            worst = worst.max((self.g_var[k] - rhs).abs() / scale);
            let rhs = 2.0 / t * self.vu_cov[k] + self.au_cov[k];
            let scale = 1.0 + (2.0 / t * self.vu_cov[k]).abs() + self.au_cov[k].abs();
            worst = worst.max((self.gu_cov[k] - rhs).abs() / scale);
        }
        worst
    }

    pub fn min_variance(&self) -> f64 {
        [&self.g_var, &self.v_var, &self.a_var, &self.u_var]
            .iter()
            .flat_map(|v| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Additive constant fixed per replication before taking spreads over data sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialAnchor {
    /// `v = a = 0` at the origin for every data set.
    Origin,
    /// `ln Z` folded into `v` so that `ρ = e^{−g}` exactly; the normalizer then carries no
    /// data-set randomness, which is what the log-normal and delta-method forms neglect.
    #[default]
    Normalized,
}

/// Statistics for an SGD ensemble built from potentials.
pub fn compute_potential_stats(ens: &AveragingEnsemble, anchor: PotentialAnchor) -> Result<PotentialStats> {
    let pots = ens
        .potentials
        .as_ref()
        .ok_or_else(|| Error::Unsupported("ensemble was not built from potentials".into()))?;
    let t = ens.params.expect("set with potentials").temperature;
    let v_rows: Vec<Vec<f64>> = pots
        .iter()
        .zip(&ens.densities)
        .map(|(p, rho)| {
            let shift = match anchor {
                PotentialAnchor::Origin => 0.0,
                PotentialAnchor::Normalized => 0.5 * t * rho.log_z(),
            };
            p.v.iter().map(|v| v + shift).collect()
        })
        .collect();
    let a_rows: Vec<Vec<f64>> = pots.iter().map(|p| p.a.clone()).collect();
    let u_rows = ens.tabulate(&Observable::train_loss(&ens.model))?;
    PotentialStats::from_rows(ens.geometry().clone(), t, &v_rows, &a_rows, &u_rows)
}

/// `ρ̄ ≈ e^{−ḡ + σ_g²/2} / Z̄`.
pub fn lognormal_rho_bar(stats: &PotentialStats, policy: BoundaryPolicy) -> Result<DensityGrid> {
    let exponent: Vec<f64> = stats.g_mean.iter().zip(&stats.g_var).map(|(g, s)| -g + 0.5 * s).collect();
    DensityGrid::from_log_values(stats.geometry.clone(), &exponent, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Large,
    Intermediate,
    Small,
}

impl Regime {
    /// Threshold reading of "≫ 1" and "≪ 1" on a ρ̄-weighted mean.
    pub fn classify(weighted_mean: f64) -> Self {
        if weighted_mean >= 10.0 {
            Regime::Large
        } else if weighted_mean <= 0.1 {
            Regime::Small
        } else {
            Regime::Intermediate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LognormalGap {
    /// `⟨⟨Ū(1 − e^{−x})⟩⟩` with `x = σ_gu/Ū + σ_u⁴/(8Ū⁴)`.
    pub value: f64,
    /// `⟨⟨Ū⟩⟩`, the `x ≫ 1` branch.
    pub large_branch: f64,
    /// `⟨⟨σ_gu⟩⟩ + ⅛⟨⟨σ_u⁴/Ū³⟩⟩`, the `x ≪ 1` branch.
    pub small_branch: f64,
    /// The small branch written as `(2/T)⟨⟨σ_vu⟩⟩ + ⟨⟨σ_au⟩⟩ + ⅛⟨⟨σ_u⁴/Ū³⟩⟩`.
    pub small_branch_sgd: f64,
    pub mean_exponent: f64,
    pub regime: Regime,
}

/// Loss values at or below this count as zero loss.
const ZERO_LOSS: f64 = 1e-300;

pub fn lognormal_gap(stats: &PotentialStats, rho_bar: &DensityGrid) -> Result<LognormalGap> {
    check_same_grid(&stats.geometry, rho_bar)?;
    let t = stats.temperature;
    let n = stats.u_mean.len();
    let mut full = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut tail = vec![0.0; n];
    for k in 0..n {
        let u = stats.u_mean[k];
        if u <= ZERO_LOSS {
            // e^{−∞} = 0: the integrand is Ū itself.
            full[k] = u.max(0.0);
            x[k] = f64::INFINITY;
            continue;
        }
        let s4 = stats.u_var[k] * stats.u_var[k];
        x[k] = stats.gu_cov[k] / u + s4 / (8.0 * u.powi(4));
        full[k] = u * -(-x[k]).exp_m1();
        tail[k] = s4 / (8.0 * u.powi(3));
    }
    let finite_x: Vec<f64> = x.iter().map(|v| if v.is_finite() { *v } else { f64::MAX.sqrt() }).collect();
    let mean_exponent = rho_bar.integrate(&finite_x);
    let tail_int = rho_bar.integrate(&tail);
    let small_sgd: Vec<f64> = (0..n).map(|k| 2.0 / t * stats.vu_cov[k] + stats.au_cov[k]).collect();
    Ok(LognormalGap {
        value: rho_bar.integrate(&full),
        large_branch: rho_bar.integrate(&stats.u_mean),
        small_branch: rho_bar.integrate(&stats.gu_cov) + tail_int,
        small_branch_sgd: rho_bar.integrate(&small_sgd) + tail_int,
        mean_exponent,
        regime: Regime::classify(mean_exponent),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LognormalBounds {
    /// `(1/√n)⟨⟨σ_ℓ √(e^{σ_g²} − 1)⟩⟩`.
    pub generic: f64,
    /// `(1/√n)⟨⟨σ_ℓ e^{σ_g²/2}⟩⟩`; also the approximate bound on test performance.
    pub generic_large: f64,
    /// `(1/√n)⟨⟨σ_ℓ σ_g⟩⟩`.
    pub generic_small: f64,
    /// `(1/√n)⟨⟨σ_ℓ e^{2σ_v²/T² + σ_a²/2}⟩⟩`.
    pub sgd_large: f64,
    /// `(2/T)(1/√n)⟨⟨σ_ℓ σ_v √(1 + T²σ_a²/(4σ_v²))⟩⟩`.
    pub sgd_small: f64,
    pub mean_g_var: f64,
    pub regime: Regime,
}

impl LognormalBounds {
    pub fn test_performance(&self) -> f64 {
        self.generic_large
    }
}

/// Approximate gap bounds; `loss_std` is the population std of the per-example loss at each node.
pub fn lognormal_gap_upper_bounds(
    stats: &PotentialStats,
    rho_bar: &DensityGrid,
    loss_std: &[f64],
    n_train: usize,
) -> Result<LognormalBounds> {
    check_same_grid(&stats.geometry, rho_bar)?;
    if loss_std.len() != stats.g_var.len() {
        return Err(Error::DimensionMismatch { expected: stats.g_var.len(), got: loss_std.len() });
    }
    let t = stats.temperature;
    let pref = 1.0 / (n_train as f64).sqrt();
    let col = |f: &dyn Fn(usize) -> f64| -> f64 {
        let vals: Vec<f64> = (0..loss_std.len()).map(f).collect();
        pref * rho_bar.integrate(&vals)
    };
    let sg2 = |k: usize| stats.g_var[k].max(0.0);
    let sv2 = |k: usize| stats.v_var[k].max(0.0);
    let sa2 = |k: usize| stats.a_var[k].max(0.0);
    let mean_g_var = rho_bar.integrate(&stats.g_var);
    Ok(LognormalBounds {
        generic: col(&|k| loss_std[k] * sg2(k).exp_m1().sqrt()),
        generic_large: col(&|k| loss_std[k] * (0.5 * sg2(k)).exp()),
        generic_small: col(&|k| loss_std[k] * sg2(k).sqrt()),
        sgd_large: col(&|k| loss_std[k] * (2.0 * sv2(k) / (t * t) + 0.5 * sa2(k)).exp()),
        sgd_small: 2.0 / t
            // σ_v √(1 + T²σ_a²/(4σ_v²)) written so that σ_v → 0 stays finite.
            * col(&|k| loss_std[k] * (sv2(k) + t * t * sa2(k) / 4.0).sqrt()),
        mean_g_var,
        regime: Regime::classify(mean_g_var),
    })
}

fn check_same_grid(geometry: &Arc<GridGeometry>, density: &DensityGrid) -> Result<()> {
    if density.geometry().as_ref() != geometry.as_ref() {
        return Err(Error::InvalidArgument("statistics and density live on different grids".into()));
    }
    Ok(())
}

/// Second-order delta-method covariance of `f(X)` and `h(X)` for `X` with mean `μ`, covariance `Σ`.
pub fn delta_method_cov(f: &dyn Smooth, h: &dyn Smooth, mu: &[f64], sigma: &DMatrix<f64>) -> Result<f64> {
    let p = mu.len();
    if sigma.nrows() != p || sigma.ncols() != p {
        return Err(Error::DimensionMismatch { expected: p, got: sigma.nrows() });
    }
    let lo = min_eigenvalue(sigma);
    if lo < -1e-12 * sigma.amax().max(1.0) {
        return Err(Error::NotPositiveSemidefinite(lo));
    }
    let df = DVector::from_vec(f.gradient(mu));
    let dh = DVector::from_vec(h.gradient(mu));
    let outer = &df * dh.transpose() + &dh * df.transpose();
    let tr = |a: &DMatrix<f64>| (sigma * a).trace();
    Ok(0.5 * (tr(&outer) - 0.5 * tr(&f.hessian(mu)) * tr(&h.hessian(mu))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaGap {
    /// `∫ ρ(θ|μ) σ_gu dθ`.
    pub value: f64,
    /// `(2/T)⟨σ_vu⟩` under `ρ(θ|μ)`.
    pub v_part: f64,
    /// `⟨σ_au⟩` under `ρ(θ|μ)`.
    pub a_part: f64,
}

pub fn delta_method_gap(stats: &PotentialStats, density_at_mean: &DensityGrid) -> Result<DeltaGap> {
    check_same_grid(&stats.geometry, density_at_mean)?;
    Ok(DeltaGap {
        value: density_at_mean.integrate(&stats.gu_cov),
        v_part: 2.0 / stats.temperature * density_at_mean.integrate(&stats.vu_cov),
        a_part: density_at_mean.integrate(&stats.au_cov),
    })
}

/// Boltzmann density of the SGD diffusion trained on the model's mean data set.
pub fn mean_dataset_density(
    model: &LossModel,
    params: &LangevinParams,
    geometry: &Arc<GridGeometry>,
    policy: BoundaryPolicy,
) -> Result<DensityGrid> {
    let train = model.mean_dataset(Split::Train)?;
    EffectivePotential::new(model, &train, params)?.on_grid(geometry)?.density(params.temperature, policy)
}

/// Test loss of the population at every grid node.
pub fn population_test_loss(model: &LossModel, geometry: &GridGeometry, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    (0..geometry.len())
        .into_par_iter()
        .map(|k| Ok(model.population_loss_and_variance(&geometry.node(k), Split::Test, n_mc, seed)?.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TemperaturePoint {
    pub temperature: f64,
    /// `⟨⟨Ū⟩⟩` with the population test loss.
    pub test_performance: f64,
    /// `2 Cov_ρ̄(Ū, σ_v²) / Cov_ρ̄(Ū, v̄ − σ_va)`; `None` when the denominator is not positive.
    pub formula: Option<f64>,
    /// `(2/T²) Cov_ρ̄(Ū, v̄ − σ_va) − (4/T³) Cov_ρ̄(Ū, σ_v²)`.
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalTemperature {
    pub points: Vec<TemperaturePoint>,
    /// Grid temperature closest to a fixed point of the formula.
    pub formula_fixed_point: Option<f64>,
    /// Whether the formula crosses `T` between two grid points.
    pub fixed_point_bracketed: bool,
    pub scan_argmin: f64,
    /// Whether the scan minimum lies strictly inside the grid.
    pub scan_interior: bool,
    /// The denominator covariance was not positive somewhere on the grid.
    pub no_learning: bool,
}

fn rho_cov(rho: &DensityGrid, x: &[f64], y: &[f64]) -> f64 {
    let mx = rho.integrate(x);
    let my = rho.integrate(y);
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    rho.integrate(&xy)
}

/// One point of the temperature scan from an ensemble built at that temperature.
pub fn temperature_point(ens: &AveragingEnsemble, test_loss: &[f64], anchor: PotentialAnchor) -> Result<TemperaturePoint> {
    let stats = compute_potential_stats(ens, anchor)?;
    let t = stats.temperature;
    let rho = &ens.rho_bar;
    let num = rho_cov(rho, test_loss, &stats.v_var);
    let centred: Vec<f64> = stats.v_mean.iter().zip(&stats.va_cov).map(|(v, c)| v - c).collect();
    let den = rho_cov(rho, test_loss, &centred);
    Ok(TemperaturePoint {
        temperature: t,
        test_performance: rho.integrate(test_loss),
        formula: (den > 0.0).then(|| 2.0 * num / den),
        derivative: 2.0 / (t * t) * den - 4.0 / (t * t * t) * num,
    })
}

/// Scans `temperatures` (ascending) with `build` producing the ensemble at each temperature.
pub fn optimal_temperature(
    model: &LossModel,
    build: impl Fn(f64) -> Result<AveragingEnsemble> + Sync,
    temperatures: &[f64],
    anchor: PotentialAnchor,
    n_mc: usize,
    seed: u64,
) -> Result<OptimalTemperature> {
    if temperatures.len() < 3 || temperatures.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("need at least 3 strictly increasing temperatures".into()));
    }
    let points = temperatures
        .par_iter()
        .map(|&t| {
            let ens = build(t)?;
            let test = population_test_loss(model, ens.geometry(), n_mc, seed)?;
            temperature_point(&ens, &test, anchor)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_scan(points))
}

pub fn summarize_scan(points: Vec<TemperaturePoint>) -> OptimalTemperature {
    let (k_min, _) = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.test_performance.total_cmp(&b.1.test_performance))
        .expect("non-empty scan");
    let mismatch = |p: &TemperaturePoint| p.formula.filter(|f| *f > 0.0).map(|f| (f / p.temperature).ln());
    let mut best: Option<(usize, f64)> = None;
    let mut bracketed = false;
    for k in 0..points.len() {
        let Some(d) = mismatch(&points[k]) else { continue };
        if best.is_none_or(|(_, b)| d.abs() < b.abs()) {
            best = Some((k, d));
        }
        if let Some(next) = points.get(k + 1).and_then(mismatch) {
            bracketed |= d.signum() != next.signum();
        }
    }
    OptimalTemperature {
        formula_fixed_point: best.map(|(k, _)| points[k].temperature),
        fixed_point_bracketed: bracketed,
        scan_argmin: points[k_min].temperature,
        scan_interior: k_min > 0 && k_min + 1 < points.len(),
        no_learning: points.iter().any(|p| p.formula.is_none()),
        points,
    }
}

/// `(2/T²) E_D Cov_ρ(v, U_ℓ)` for an ensemble built at temperature `T`.
pub fn train_loss_t_derivative(ens: &AveragingEnsemble) -> Result<Estimate> {
    let pots = ens
        .potentials
        .as_ref()
        .ok_or_else(|| Error::Unsupported("ensemble was not built from potentials".into()))?;
    let t = ens.params.expect("set with potentials").temperature;
    let u_rows = ens.tabulate(&Observable::train_loss(&ens.model))?;
    let covs: Vec<f64> = ens
        .densities
        .iter()
        .zip(pots)
        .zip(&u_rows)
        .map(|((rho, p), u)| rho_cov(rho, &p.v, u))
        .collect();
    let e = Estimate::from_samples(&covs);
    let scale = 2.0 / (t * t);
    Ok(Estimate::new(scale * e.value, scale * e.stderr))
}

/// One local minimum of the mixture description of the parameter distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMinimum {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub train_minimizer: DVector<f64>,
    pub test_minimizer: DVector<f64>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_hessian: DMatrix<f64>,
    pub test_hessian: DMatrix<f64>,
}

impl LocalMinimum {
    pub fn bias(&self) -> DVector<f64> {
        &self.mean - &self.train_minimizer
    }

    pub fn shift(&self) -> DVector<f64> {
        &self.train_minimizer - &self.test_minimizer
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureSpec {
    minima: Vec<LocalMinimum>,
}

impl CurvatureSpec {
    pub fn new(minima: Vec<LocalMinimum>) -> Result<Self> {
        if minima.is_empty() {
            return Err(Error::EmptySet);
        }
        let total: f64 = minima.iter().map(|m| m.weight).sum();
        if minima.iter().any(|m| m.weight < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights must be nonnegative and sum to 1, got {total}")));
        }
        for m in &minima {
            let lo = min_eigenvalue(&m.covariance);
            if lo < -1e-12 * m.covariance.amax().max(1.0) {
                return Err(Error::NotPositiveSemidefinite(lo));
            }
        }
        Ok(Self { minima })
    }

    pub fn minima(&self) -> &[LocalMinimum] {
        &self.minima
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureExpansion {
    pub test: f64,
    pub train: f64,
}

pub fn curvature_expansion(spec: &CurvatureSpec) -> CurvatureExpansion {
    let quad = |c: &DMatrix<f64>, x: &DVector<f64>| (x.transpose() * c * x)[(0, 0)];
    let mut out = CurvatureExpansion { test: 0.0, train: 0.0 };
    for m in &spec.minima {
        let b = m.bias();
        let bs = &b + m.shift();
        out.test += m.weight
            * (m.test_loss + 0.5 * (&m.covariance * &m.test_hessian).trace() + 0.5 * quad(&m.test_hessian, &bs));
        out.train += m.weight
            * (m.train_loss + 0.5 * (&m.covariance * &m.train_hessian).trace() + 0.5 * quad(&m.train_hessian, &b));
    }
    out
}

/// `h(θ) + ½ Tr(∂²h · Cov(s))`.
pub fn sampling_shift_curvature(h: &dyn Smooth, theta: &[f64], shift_cov: &DMatrix<f64>) -> Result<f64> {
    if shift_cov.nrows() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: shift_cov.nrows() });
    }
    let lo = min_eigenvalue(shift_cov);
    if lo < -1e-12 * shift_cov.amax().max(1.0) {
        return Err(Error::NotPositiveSemidefinite(lo));
    }
    Ok(h.value(theta) + 0.5 * (h.hessian(theta) * shift_cov).trace())
}

/// Row of an approximation-versus-exact table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub exact: f64,
    pub approx: f64,
    pub relative_error: f64,
    pub validity: String,
}

impl ComparisonRow {
    pub fn new(quantity: impl Into<String>, exact: f64, approx: f64, validity: impl Into<String>) -> Self {
        let relative_error = if exact != 0.0 { (approx - exact).abs() / exact.abs() } else { (approx - exact).abs() };
        Self { quantity: quantity.into(), exact, approx, relative_error, validity: validity.into() }
    }
}

pub fn write_comparison_csv(rows: &[ComparisonRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Total variation between the log-normal `ρ̄` and the ensemble's `ρ̄`.
pub fn lognormal_tv(stats: &PotentialStats, ens: &AveragingEnsemble, policy: BoundaryPolicy) -> Result<f64> {
    lognormal_rho_bar(stats, policy)?.total_variation(&ens.rho_bar)
}

/// Pointwise std of the ensemble densities.
pub fn density_spread(ens: &AveragingEnsemble) -> Vec<f64> {
    pointwise_std(&ens.densities.iter().map(|d| d.values()).collect::<Vec<_>>())
}
