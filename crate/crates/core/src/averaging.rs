//! Averages over parameters and over data sets, and the exact identities relating them.
//!
//! An [`AveragingEnsemble`] holds one density per sampled data set, all on one shared grid, so
//! every data-set covariance is a pointwise operation over node arrays.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::data_sampling::{DataSetPair, SamplingMode};
use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, DensityGrid, GridGeometry};
use crate::langevin::LangevinParams;
use crate::rng::derive_seed;
use crate::stats::{combined_stderr, mean, sample_std, Estimate};
use crate::steady_state::{covering_geometry, EffectivePotential, GridSpec, PotentialGrid};
use crate::toy_models::{LossModel, Split};

type ObservableFn = dyn Fn(&[f64], &DataSetPair) -> f64 + Send + Sync;

/// A function `f(θ, D)` of parameters and data.
#[derive(Clone)]
pub enum Observable {
    Constant(f64),
    /// Mean loss over the train or test set of the data-set pair.
    SetLoss { model: Arc<LossModel>, split: Split },
    Custom { name: String, f: Arc<ObservableFn> },
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl Observable {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[f64], &DataSetPair) -> f64 + Send + Sync + 'static) -> Self {
        Observable::Custom { name: name.into(), f: Arc::new(f) }
    }

    /// Data-independent function of θ.
    pub fn of_theta(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::custom(name, move |th, _| f(th))
    }

    pub fn train_loss(model: &LossModel) -> Self {
        Observable::SetLoss { model: Arc::new(model.clone()), split: Split::Train }
    }

    pub fn test_loss(model: &LossModel) -> Self {
        Observable::SetLoss { model: Arc::new(model.clone()), split: Split::Test }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::Constant(c) => format!("const({c})"),
            Observable::SetLoss { split: Split::Train, .. } => "train_loss".into(),
            Observable::SetLoss { split: Split::Test, .. } => "test_loss".into(),
            Observable::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, theta: &[f64], d: &DataSetPair) -> Result<f64> {
        match self {
            Observable::Constant(c) => Ok(*c),
            Observable::SetLoss { model, split } => model.train_set_loss(theta, d.set(*split)),
            Observable::Custom { f, .. } => Ok(f(theta, d)),
        }
    }

    /// Values at every node of `geometry` for data set `d`.
    pub fn on_grid(&self, geometry: &GridGeometry, d: &DataSetPair) -> Result<Vec<f64>> {
        let values: Vec<f64> = match self {
            Observable::Constant(c) => vec![*c; geometry.len()],
            Observable::SetLoss { model, split } => {
                let land = model.landscape(d.set(*split))?;
                geometry.nodes().map(|x| land.loss(&x)).collect()
            }
            Observable::Custom { f, .. } => geometry.nodes().map(|x| f(&x, d)).collect(),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observable {} on the grid", self.name())));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone)]
pub struct AveragingEnsemble {
    pub model: LossModel,
    pub datasets: Vec<DataSetPair>,
    pub densities: Vec<DensityGrid>,
    pub rho_bar: DensityGrid,
    /// Tabulated potentials when the densities are Boltzmann densities of the SGD diffusion.
    pub potentials: Option<Vec<PotentialGrid>>,
    pub params: Option<LangevinParams>,
}

impl AveragingEnsemble {
    pub fn new(model: LossModel, datasets: Vec<DataSetPair>, densities: Vec<DensityGrid>) -> Result<Self> {
        if datasets.is_empty() || datasets.len() != densities.len() {
            return Err(Error::Insufficient(format!(
                "{} data sets for {} densities",
                datasets.len(),
                densities.len()
            )));
        }
        let geometry = densities[0].geometry().clone();
        if densities.iter().any(|d| d.geometry() != &geometry) {
            return Err(Error::InvalidArgument("ensemble densities must share one grid".into()));
        }
        let m = densities.len() as f64;
        let mut bar = vec![0.0; geometry.len()];
        for d in &densities {
            for (b, v) in bar.iter_mut().zip(d.values()) {
                *b += v / m;
            }
        }
        let mass = geometry.integrate(&bar);
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::NonFinite(format!("mean density has mass {mass}")));
        }
        let rho_bar = DensityGrid::from_values(geometry, bar)?;
        Ok(Self { model, datasets, densities, rho_bar, potentials: None, params: None })
    }

    /// Boltzmann densities of the plain-SGD diffusion for every data set, on one covering grid.
    pub fn sgd_boltzmann(
        model: &LossModel,
        datasets: Vec<DataSetPair>,
        params: &LangevinParams,
        spec: &GridSpec,
    ) -> Result<Self> {
        let mut spec = *spec;
        for _ in 0..5 {
            let extents = datasets
                .par_iter()
                .map(|d| EffectivePotential::new(model, &d.train, params)?.extent(spec.rise))
                .collect::<Result<Vec<_>>>()?;
            let geometry = covering_geometry(&extents, &spec)?;
            match Self::on_geometry(model, datasets.clone(), params, &geometry) {
                Err(Error::BoundaryMass(_)) => spec.rise *= 1.5,
                other => return other,
            }
        }
        Err(Error::BoundaryMass(f64::NAN))
    }

    /// As [`Self::sgd_boltzmann`] on a caller-supplied grid.
    ///
    /// Each replication's `v` and `a` are shifted to vanish at the origin. The densities do not
    /// depend on the shift, but spreads of the potentials over data sets only mean something
    /// against a common, data-independent anchor.
    pub fn on_geometry(
        model: &LossModel,
        datasets: Vec<DataSetPair>,
        params: &LangevinParams,
        geometry: &Arc<GridGeometry>,
    ) -> Result<Self> {
        let anchor = vec![0.0; model.dim()];
        let potentials = datasets
            .par_iter()
            .map(|d| {
                let ep = EffectivePotential::new(model, &d.train, params)?;
                let mut grid = ep.on_grid(geometry)?;
                let (v0, a0) = (ep.v.eval(&anchor)?, ep.a.eval(&anchor)?);
                grid.v.iter_mut().for_each(|v| *v -= v0);
                grid.a.iter_mut().for_each(|a| *a -= a0);
                Ok(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_potentials(model, datasets, potentials, params, BoundaryPolicy::Enforce)
    }

    pub fn from_potentials(
        model: &LossModel,
        datasets: Vec<DataSetPair>,
        potentials: Vec<PotentialGrid>,
        params: &LangevinParams,
        policy: BoundaryPolicy,
    ) -> Result<Self> {
        let densities = potentials
            .par_iter()
            .map(|p| p.density(params.temperature, policy))
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::new(model.clone(), datasets, densities)?;
        ens.potentials = Some(potentials);
        ens.params = Some(*params);
        Ok(ens)
    }

    /// Same potentials and grid at another temperature.
    pub fn at_temperature(&self, temperature: f64, policy: BoundaryPolicy) -> Result<Self> {
        let potentials = self
            .potentials
            .clone()
            .ok_or_else(|| Error::Unsupported("ensemble was not built from potentials".into()))?;
        let params = LangevinParams { temperature, ..self.params.expect("set with potentials") };
        Self::from_potentials(&self.model, self.datasets.clone(), potentials, &params, policy)
    }

    pub fn m(&self) -> usize {
        self.datasets.len()
    }

    pub fn geometry(&self) -> &Arc<GridGeometry> {
        self.rho_bar.geometry()
    }

    /// `f` at every node for every replication (`m` rows).
    pub fn tabulate(&self, f: &Observable) -> Result<Vec<Vec<f64>>> {
        let g = self.geometry().clone();
        self.datasets.par_iter().map(|d| f.on_grid(&g, d)).collect()
    }

    fn require_replications(&self, min: usize) -> Result<()> {
        if self.m() < min {
            return Err(Error::Insufficient(format!("need at least {min} replications, have {}", self.m())));
        }
        Ok(())
    }
}

/// `⟨f⟩ = ∫ f(θ, d) ρ(θ|d) dθ`.
pub fn conditional_average(f: &Observable, density: &DensityGrid, d: &DataSetPair) -> Result<f64> {
    Ok(density.integrate(&f.on_grid(density.geometry(), d)?))
}

fn per_replication(values: &[Vec<f64>], ens: &AveragingEnsemble) -> Vec<f64> {
    ens.densities.iter().zip(values).map(|(rho, f)| rho.integrate(f)).collect()
}

/// `E_D ⟨f⟩`, with the standard error over replications.
pub fn total_average(f: &Observable, ens: &AveragingEnsemble) -> Result<Estimate> {
    ens.require_replications(2)?;
    Ok(Estimate::from_samples(&per_replication(&ens.tabulate(f)?, ens)))
}

fn node_means(values: &[Vec<f64>]) -> Vec<f64> {
    let m = values.len() as f64;
    let n = values[0].len();
    let mut out = vec![0.0; n];
    for row in values {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v / m;
        }
    }
    out
}

fn density_rows(ens: &AveragingEnsemble) -> Vec<&[f64]> {
    ens.densities.iter().map(|d| d.values()).collect()
}

/// `⟨⟨f̄⟩⟩ = ∫ ρ̄ f̄`, standard error from the linearized (influence-function) variance.
fn double_bracket_tab(values: &[Vec<f64>], ens: &AveragingEnsemble) -> Estimate {
    let w = ens.geometry().weights();
    let fbar = node_means(values);
    let rbar = ens.rho_bar.values();
    let value: f64 = (0..w.len()).map(|k| w[k] * rbar[k] * fbar[k]).sum();
    let rows = density_rows(ens);
    let influence: Vec<f64> = (0..ens.m())
        .map(|i| (0..w.len()).map(|k| w[k] * ((rows[i][k] - rbar[k]) * fbar[k] + rbar[k] * (values[i][k] - fbar[k]))).sum())
        .collect();
    Estimate::new(value, sample_std(&influence) / (ens.m() as f64).sqrt())
}

pub fn double_bracket(f: &Observable, ens: &AveragingEnsemble) -> Result<Estimate> {
    Ok(double_bracket_tab(&ens.tabulate(f)?, ens))
}

/// Pointwise `Cov_D(ρ, f)` with the 1/(m−1) normalization.
pub fn cov_over_data(f: &Observable, ens: &AveragingEnsemble) -> Result<Vec<f64>> {
    ens.require_replications(2)?;
    let values = ens.tabulate(f)?;
    Ok(pointwise_cov(&density_rows(ens), &values))
}

fn pointwise_cov(rho: &[&[f64]], f: &[Vec<f64>]) -> Vec<f64> {
    let m = rho.len();
    let n = rho[0].len();
    let fbar = node_means(f);
    let mut rbar = vec![0.0; n];
    for r in rho {
        for k in 0..n {
            rbar[k] += r[k] / m as f64;
        }
    }
    let mut out = vec![0.0; n];
    for i in 0..m {
        for k in 0..n {
            out[k] += (rho[i][k] - rbar[k]) * (f[i][k] - fbar[k]);
        }
    }
    out.iter_mut().for_each(|v| *v /= (m - 1) as f64);
    out
}

/// `∫ Cov_D(ρ, f) dθ`, standard error from the per-replication cross products.
fn integrated_cov_tab(values: &[Vec<f64>], ens: &AveragingEnsemble) -> Estimate {
    let w = ens.geometry().weights();
    let rows = density_rows(ens);
    let m = ens.m();
    let fbar = node_means(values);
    let rbar = ens.rho_bar.values();
    let z: Vec<f64> = (0..m)
        .map(|i| (0..w.len()).map(|k| w[k] * (rows[i][k] - rbar[k]) * (values[i][k] - fbar[k])).sum())
        .collect();
    let value = z.iter().sum::<f64>() / (m - 1) as f64;
    let se = if m > 1 { sample_std(&z) * (m as f64).sqrt() / (m - 1) as f64 } else { f64::INFINITY };
    Estimate::new(value, if se.is_finite() { se } else { f64::INFINITY })
}

pub fn integrated_covariance(f: &Observable, ens: &AveragingEnsemble) -> Result<Estimate> {
    ens.require_replications(2)?;
    Ok(integrated_cov_tab(&ens.tabulate(f)?, ens))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub lhs: Estimate,
    pub covariance_term: Estimate,
    pub mean_field_term: Estimate,
    pub rhs: Estimate,
    pub residual: f64,
    pub combined_stderr: f64,
}

impl Decomposition {
    pub fn within(&self, sigmas: f64) -> bool {
        self.residual.abs() <= sigmas * self.combined_stderr
    }
}

/// `E_D⟨f⟩` against `∫Cov_D(ρ, f) + ⟨⟨f̄⟩⟩`.
pub fn decomposition_check(f: &Observable, ens: &AveragingEnsemble) -> Result<Decomposition> {
    ens.require_replications(2)?;
    let values = ens.tabulate(f)?;
    let lhs = Estimate::from_samples(&per_replication(&values, ens));
    let cov = integrated_cov_tab(&values, ens);
    let mf = double_bracket_tab(&values, ens);
    // Both terms share the replications; the joint influence function gives the rhs error.
    let rhs_value = cov.value + mf.value;
    let rhs_se = joint_rhs_stderr(&values, ens);
    let rhs = Estimate::new(rhs_value, rhs_se);
    Ok(Decomposition {
        lhs,
        covariance_term: cov,
        mean_field_term: mf,
        rhs,
        residual: lhs.value - rhs.value,
        combined_stderr: combined_stderr(lhs.stderr, rhs.stderr),
    })
}

fn joint_rhs_stderr(values: &[Vec<f64>], ens: &AveragingEnsemble) -> f64 {
    let w = ens.geometry().weights();
    let rows = density_rows(ens);
    let m = ens.m();
    let fbar = node_means(values);
    let rbar = ens.rho_bar.values();
    let psi: Vec<f64> = (0..m)
        .map(|i| {
            (0..w.len())
                .map(|k| {
                    let dr = rows[i][k] - rbar[k];
                    let df = values[i][k] - fbar[k];
                    w[k] * (dr * df * m as f64 / (m - 1) as f64 + dr * fbar[k] + rbar[k] * df)
                })
                .sum()
        })
        .collect();
    sample_std(&psi) / (m as f64).sqrt()
}

/// `E_D(⟨U_e⟩ − ⟨U_ℓ⟩)` with the paired standard error.
pub fn gap_direct(ens: &AveragingEnsemble) -> Result<Estimate> {
    ens.require_replications(2)?;
    let train = per_replication(&ens.tabulate(&Observable::train_loss(&ens.model))?, ens);
    let test = per_replication(&ens.tabulate(&Observable::test_loss(&ens.model))?, ens);
    let gaps: Vec<f64> = test.iter().zip(&train).map(|(e, l)| e - l).collect();
    Ok(Estimate::from_samples(&gaps))
}

/// `−∫ Cov_D(ρ, U_ℓ) dθ`; valid only with independent train/test draws from one population.
pub fn gap_via_covariance(ens: &AveragingEnsemble) -> Result<Estimate> {
    ens.require_replications(2)?;
    if ens.model.has_distribution_shift() {
        return Err(Error::Unsupported("the covariance form of the gap assumes no distribution shift".into()));
    }
    if ens.datasets.iter().any(|d| d.mode != SamplingMode::IidFresh) {
        return Err(Error::Unsupported("the covariance form of the gap assumes independent draws".into()));
    }
    let c = integrated_covariance(&Observable::train_loss(&ens.model), ens)?;
    Ok(Estimate::new(-c.value, c.stderr))
}

/// `(1/√n_ℓ) ∫ σ_ρ σ_ℓ dθ`, with `σ_ℓ` the population std of the per-example loss.
pub fn gap_upper_bound(ens: &AveragingEnsemble, n_mc: usize, seed: u64) -> Result<f64> {
    ens.require_replications(2)?;
    let sigma_ell = population_loss_std(&ens.model, ens.geometry(), n_mc, seed)?;
    let n_train = ens.datasets[0].train.len() as f64;
    Ok(bound_from_sigma(ens, &sigma_ell, n_train))
}

pub(crate) fn bound_from_sigma(ens: &AveragingEnsemble, sigma_ell: &[f64], n_train: f64) -> f64 {
    let sigma_rho = pointwise_std(&density_rows(ens));
    let w = ens.geometry().weights();
    (0..w.len()).map(|k| w[k] * sigma_rho[k] * sigma_ell[k]).sum::<f64>() / n_train.sqrt()
}

pub fn pointwise_std(rows: &[&[f64]]) -> Vec<f64> {
    let m = rows.len();
    let n = rows[0].len();
    (0..n)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let mu = mean(&col);
            (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1) as f64).sqrt()
        })
        .collect()
}

pub fn population_loss_std(model: &LossModel, geometry: &GridGeometry, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    (0..geometry.len())
        .into_par_iter()
        .map(|k| {
            let (_, var) = model.population_loss_and_variance(&geometry.node(k), Split::Train, n_mc, derive_seed(&[seed, k as u64]))?;
            Ok(var.max(0.0).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialGapCheck {
    /// `E_D⟨g⟩`.
    pub lhs: Estimate,
    /// `⟨⟨ḡ⟩⟩`.
    pub rhs: Estimate,
    /// `rhs − lhs`, which is nonnegative.
    pub margin: Estimate,
    /// The same comparison for `v` and for `a` separately, when the potentials are available.
    pub v_parts: Option<(Estimate, Estimate)>,
    pub a_parts: Option<(Estimate, Estimate)>,
}

impl PotentialGapCheck {
    pub fn holds(&self, sigmas: f64) -> bool {
        self.margin.value >= -sigmas * self.margin.stderr
    }
}

/// Compares `E_D⟨g⟩` with `⟨⟨ḡ⟩⟩` for explicitly tabulated potentials (one row per replication)
/// whose Boltzmann densities are the ensemble's densities.
pub fn potential_gap_from_tabulated(ens: &AveragingEnsemble, g_rows: &[Vec<f64>]) -> Result<PotentialGapCheck> {
    ens.require_replications(2)?;
    if g_rows.len() != ens.m() {
        return Err(Error::DimensionMismatch { expected: ens.m(), got: g_rows.len() });
    }
    let lhs_i = per_replication(g_rows, ens);
    let lhs = Estimate::from_samples(&lhs_i);
    let rhs = double_bracket_tab(g_rows, ens);
    // margin = rhs − lhs = −((m−1)/m)·∫Cov(ρ, g); error from its own influence function.
    let c = integrated_cov_tab(g_rows, ens);
    let m = ens.m() as f64;
    let margin = Estimate::new(rhs.value - lhs.value, c.stderr * (m - 1.0) / m);
    Ok(PotentialGapCheck { lhs, rhs, margin, v_parts: None, a_parts: None })
}

/// The effective-potential gap for an SGD ensemble, with the `v` and `a` parts reported.
pub fn effective_potential_gap_check(ens: &AveragingEnsemble) -> Result<PotentialGapCheck> {
    let pots = ens
        .potentials
        .as_ref()
        .ok_or_else(|| Error::Unsupported("ensemble was not built from potentials".into()))?;
    let t = ens.params.expect("set with potentials").temperature;
    let g_rows: Vec<Vec<f64>> = pots.iter().map(|p| p.g(t)).collect();
    let mut check = potential_gap_from_tabulated(ens, &g_rows)?;
    let v_rows: Vec<Vec<f64>> = pots.iter().map(|p| p.v.clone()).collect();
    let a_rows: Vec<Vec<f64>> = pots.iter().map(|p| p.a.clone()).collect();
    check.v_parts = Some((Estimate::from_samples(&per_replication(&v_rows, ens)), double_bracket_tab(&v_rows, ens)));
    check.a_parts = Some((Estimate::from_samples(&per_replication(&a_rows, ens)), double_bracket_tab(&a_rows, ens)));
    Ok(check)
}

/// JSON-ready summary of the identities on one ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub m: usize,
    pub decompositions: Vec<(String, Decomposition)>,
    pub gap_direct: Estimate,
    pub gap_via_covariance: Option<Estimate>,
    pub gap_upper_bound: f64,
    pub potential_gap: Option<PotentialGapCheck>,
}

pub fn summarize(ens: &AveragingEnsemble, observables: &[Observable], seed: u64) -> Result<EnsembleSummary> {
    let decompositions = observables
        .iter()
        .map(|f| Ok((f.name(), decomposition_check(f, ens)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleSummary {
        m: ens.m(),
        decompositions,
        gap_direct: gap_direct(ens)?,
        gap_via_covariance: gap_via_covariance(ens).ok(),
        gap_upper_bound: gap_upper_bound(ens, 100_000, seed)?,
        potential_gap: effective_potential_gap_check(ens).ok(),
    })
}
