//! Effective potentials of the SGD diffusion and its Boltzmann steady state on a grid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BoundaryPolicy, DensityGrid, GridGeometry};
use crate::langevin::LangevinParams;
use crate::linalg::regularized;
use crate::quadrature::{cumulative_from, integrate};
use crate::toy_models::{Landscape, LossModel, SampleSet};

/// Absolute discrepancy between the two axis-ordered paths above which a 2D field is rejected.
pub const PATH_TOLERANCE: f64 = 1e-5;
const SEGMENT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialTerm {
    /// `v`: integrand `(D+β²)⁻¹(∂U + αθ)`.
    Drift,
    /// `a`: integrand `(D+β²)⁻¹ ∂·D`.
    NoiseGradient,
}

/// `θ ↦ ∫_base^θ (D+β²)⁻¹ F`, with `F` the drift or the noise-gradient field.
#[derive(Debug, Clone)]
pub struct LineIntegral<'a> {
    landscape: Landscape<'a>,
    alpha: f64,
    beta: f64,
    base: Vec<f64>,
    term: PotentialTerm,
}

impl<'a> LineIntegral<'a> {
    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn integrand(&self, theta: &[f64]) -> Vec<f64> {
        let p = theta.len();
        let k = regularized(&self.landscape.diffusion(theta), self.beta);
        let rhs: Vec<f64> = match self.term {
            PotentialTerm::Drift => {
                self.landscape.gradient(theta).iter().zip(theta).map(|(g, t)| g + self.alpha * t).collect()
            }
            PotentialTerm::NoiseGradient => self.landscape.diffusion_divergence(theta),
        };
        if p == 1 {
            return vec![rhs[0] / k[(0, 0)]];
        }
        match k.lu().solve(&DVector::from_vec(rhs)) {
            Some(x) => x.iter().copied().collect(),
            None => vec![f64::NAN; p],
        }
    }

    fn component(&self, theta: &[f64], i: usize) -> f64 {
        self.integrand(theta)[i]
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.base.len() {
            return Err(Error::DimensionMismatch { expected: self.base.len(), got: theta.len() });
        }
        let b = &self.base;
        let value = match theta.len() {
            1 => integrate(|t| self.component(&[t], 0), b[0], theta[0], SEGMENT_TOL, 1e-12),
            2 => {
                let x_first = integrate(|t| self.component(&[t, b[1]], 0), b[0], theta[0], SEGMENT_TOL, 1e-12)
                    + integrate(|t| self.component(&[theta[0], t], 1), b[1], theta[1], SEGMENT_TOL, 1e-12);
                let y_first = integrate(|t| self.component(&[b[0], t], 1), b[1], theta[1], SEGMENT_TOL, 1e-12)
                    + integrate(|t| self.component(&[t, theta[1]], 0), b[0], theta[0], SEGMENT_TOL, 1e-12);
                let gap = (x_first - y_first).abs();
                if gap > PATH_TOLERANCE {
                    return Err(Error::PathDependence(gap));
                }
                x_first
            }
            p => return Err(Error::Unsupported(format!("{p}-dimensional line integrals"))),
        };
        crate::error::ensure_finite(value, "line integral")
    }

    /// Values at every grid node, accumulated interval by interval from the base point.
    pub fn on_grid(&self, geometry: &GridGeometry) -> Result<Vec<f64>> {
        let b = &self.base;
        let out = match geometry.axes() {
            [xs] => cumulative_from(|t| self.component(&[t], 0), b[0], xs, SEGMENT_TOL),
            [xs, ys] => {
                let along_x = cumulative_from(|t| self.component(&[t, b[1]], 0), b[0], xs, SEGMENT_TOL);
                let along_y = cumulative_from(|t| self.component(&[b[0], t], 1), b[1], ys, SEGMENT_TOL);
                let x_then_y: Vec<Vec<f64>> = xs
                    .par_iter()
                    .map(|&x| cumulative_from(|t| self.component(&[x, t], 1), b[1], ys, SEGMENT_TOL))
                    .collect();
                let y_then_x: Vec<Vec<f64>> = ys
                    .par_iter()
                    .map(|&y| cumulative_from(|t| self.component(&[t, y], 0), b[0], xs, SEGMENT_TOL))
                    .collect();
                let mut values = Vec::with_capacity(xs.len() * ys.len());
                let mut worst = 0.0f64;
                for i in 0..xs.len() {
                    for j in 0..ys.len() {
                        let p1 = along_x[i] + x_then_y[i][j];
                        let p2 = along_y[j] + y_then_x[j][i];
                        worst = worst.max((p1 - p2).abs());
                        values.push(p1);
                    }
                }
                if !(worst <= PATH_TOLERANCE) {
                    return Err(Error::PathDependence(worst));
                }
                values
            }
            _ => return Err(Error::Unsupported("grids above two dimensions".into())),
        };
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("potential at node {:?}", geometry.node(k))));
        }
        Ok(out)
    }
}

fn line_integral<'a>(
    model: &'a LossModel,
    train: &'a SampleSet,
    alpha: f64,
    beta: f64,
    base_point: &[f64],
    term: PotentialTerm,
) -> Result<LineIntegral<'a>> {
    if !(1..=2).contains(&model.dim()) {
        return Err(Error::Unsupported(format!("{}-dimensional potentials", model.dim())));
    }
    if base_point.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: base_point.len() });
    }
    Ok(LineIntegral { landscape: model.landscape(train)?, alpha, beta, base: base_point.to_vec(), term })
}

pub fn effective_potential_v<'a>(
    model: &'a LossModel,
    train: &'a SampleSet,
    alpha: f64,
    beta: f64,
    base_point: &[f64],
) -> Result<LineIntegral<'a>> {
    line_integral(model, train, alpha, beta, base_point, PotentialTerm::Drift)
}

pub fn effective_potential_a<'a>(
    model: &'a LossModel,
    train: &'a SampleSet,
    alpha: f64,
    beta: f64,
    base_point: &[f64],
) -> Result<LineIntegral<'a>> {
    line_integral(model, train, alpha, beta, base_point, PotentialTerm::NoiseGradient)
}

/// `g = (2/T) v + a` for one training set.
#[derive(Debug, Clone)]
pub struct EffectivePotential<'a> {
    pub v: LineIntegral<'a>,
    pub a: LineIntegral<'a>,
    pub temperature: f64,
}

impl<'a> EffectivePotential<'a> {
    /// Potential anchored at the minimizer of `U + ½α|θ|²`.
    pub fn new(model: &'a LossModel, train: &'a SampleSet, params: &LangevinParams) -> Result<Self> {
        if !(params.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let base = model.landscape(train)?.regularized_minimizer(params.alpha)?;
        Self::with_base(model, train, params, &base)
    }

    pub fn with_base(model: &'a LossModel, train: &'a SampleSet, params: &LangevinParams, base: &[f64]) -> Result<Self> {
        Ok(Self {
            v: effective_potential_v(model, train, params.alpha, params.beta, base)?,
            a: effective_potential_a(model, train, params.alpha, params.beta, base)?,
            temperature: params.temperature,
        })
    }

    pub fn base(&self) -> &[f64] {
        self.v.base()
    }

    pub fn g(&self, theta: &[f64]) -> Result<f64> {
        Ok(2.0 / self.temperature * self.v.eval(theta)? + self.a.eval(theta)?)
    }

    pub fn on_grid(&self, geometry: &Arc<GridGeometry>) -> Result<PotentialGrid> {
        Ok(PotentialGrid { geometry: geometry.clone(), v: self.v.on_grid(geometry)?, a: self.a.on_grid(geometry)? })
    }

    /// Per-axis interval around the base point on which `g` rises by at least `rise`.
    pub fn extent(&self, rise: f64) -> Result<Vec<(f64, f64)>> {
        let b = self.base().to_vec();
        let scale = self.laplace_scale();
        (0..b.len())
            .map(|i| {
                extent_along(
                    |t| {
                        let mut th = b.clone();
                        th[i] = t;
                        self.g_along_axis(&th, i)
                    },
                    b[i],
                    scale[i],
                    rise,
                )
            })
            .collect()
    }

    /// `g` along the axis line through the base point (no path check needed there).
    fn g_along_axis(&self, theta: &[f64], axis: usize) -> f64 {
        let b = self.base();
        let h = |term: &LineIntegral, t: f64| {
            let mut th = b.to_vec();
            th[axis] = t;
            term.component(&th, axis)
        };
        let v = integrate(|t| h(&self.v, t), b[axis], theta[axis], SEGMENT_TOL, 1e-12);
        let a = integrate(|t| h(&self.a, t), b[axis], theta[axis], SEGMENT_TOL, 1e-12);
        2.0 / self.temperature * v + a
    }

    /// Standard deviations of the Laplace approximation at the base point (diagonal of the
    /// inverse Hessian of `g`); falls back to a unit-ish scale when the curvature is not positive.
    pub fn laplace_scale(&self) -> Vec<f64> {
        let b = self.base().to_vec();
        let p = b.len();
        let mut hess = DMatrix::zeros(p, p);
        for j in 0..p {
            let d = 1e-5 * (1.0 + b[j].abs());
            let mut hi = b.clone();
            let mut lo = b.clone();
            hi[j] += d;
            lo[j] -= d;
            let (fv_hi, fv_lo) = (self.v.integrand(&hi), self.v.integrand(&lo));
            let (fa_hi, fa_lo) = (self.a.integrand(&hi), self.a.integrand(&lo));
            for i in 0..p {
                hess[(i, j)] = (2.0 / self.temperature * (fv_hi[i] - fv_lo[i]) + fa_hi[i] - fa_lo[i]) / (2.0 * d);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        match sym.try_inverse() {
            Some(inv) => (0..p)
                .map(|i| if inv[(i, i)] > 0.0 && inv[(i, i)].is_finite() { inv[(i, i)].sqrt() } else { 1e-2 })
                .collect(),
            None => vec![1e-2; p],
        }
    }
}

/// Grows a symmetric bracket `[c − r⁻, c + r⁺]` until `f` exceeds `f(c) + rise` on both ends.
pub fn extent_along(f: impl Fn(f64) -> f64, center: f64, initial: f64, rise: f64) -> Result<(f64, f64)> {
    let f0 = f(center);
    let mut ends = [0.0; 2];
    for (s, sign) in [-1.0f64, 1.0].into_iter().enumerate() {
        let mut r = initial.abs().max(1e-12);
        let mut tries = 0;
        loop {
            let val = f(center + sign * r);
            if val - f0 >= rise || val.is_nan() {
                break;
            }
            r *= 1.5;
            tries += 1;
            if tries > 200 {
                return Err(Error::BoundaryMass(1.0));
            }
        }
        ends[s] = center + sign * r;
    }
    Ok((ends[0], ends[1]))
}

/// `v` and `a` tabulated on one grid; the density at any temperature derives from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGrid {
    pub geometry: Arc<GridGeometry>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl PotentialGrid {
    pub fn g(&self, temperature: f64) -> Vec<f64> {
        self.v.iter().zip(&self.a).map(|(v, a)| 2.0 / temperature * v + a).collect()
    }

    pub fn density(&self, temperature: f64, policy: BoundaryPolicy) -> Result<DensityGrid> {
        let neg: Vec<f64> = self.g(temperature).iter().map(|g| -g).collect();
        DensityGrid::from_log_values(self.geometry.clone(), &neg, policy)
    }
}

pub fn boltzmann_density(potential: &EffectivePotential, geometry: &Arc<GridGeometry>) -> Result<DensityGrid> {
    potential.on_grid(geometry)?.density(potential.temperature, BoundaryPolicy::Enforce)
}

/// Density `∝ e^{−g}` for an explicitly given potential `g`.
pub fn boltzmann_from_fn(
    g: impl Fn(&[f64]) -> f64 + Sync,
    geometry: &Arc<GridGeometry>,
    policy: BoundaryPolicy,
) -> Result<DensityGrid> {
    let neg: Vec<f64> = (0..geometry.len()).into_par_iter().map(|k| -g(&geometry.node(k))).collect();
    DensityGrid::from_log_values(geometry.clone(), &neg, policy)
}

/// How automatically sized grids are laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Rise of `g` above its base value that marks the grid edge.
    pub rise: f64,
    /// Nodes per characteristic width of the narrowest density.
    pub nodes_per_scale: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rise: 36.0, nodes_per_scale: 8.0, min_nodes: 201, max_nodes: 100_001 }
    }
}

impl GridSpec {
    pub fn two_dimensional() -> Self {
        Self { rise: 36.0, nodes_per_scale: 6.0, min_nodes: 61, max_nodes: 601 }
    }
}

/// One grid covering every interval in `extents` (one list of per-axis intervals per density).
/// The characteristic width of an interval is its length over `2√(2·rise)`, the standard
/// deviation for a Gaussian.
pub fn covering_geometry(extents: &[Vec<(f64, f64)>], spec: &GridSpec) -> Result<Arc<GridGeometry>> {
    let p = extents.first().map(Vec::len).ok_or(Error::EmptySet)?;
    let width_per_scale = 2.0 * (2.0 * spec.rise).sqrt();
    let mut ranges = Vec::with_capacity(p);
    let mut nodes = Vec::with_capacity(p);
    for i in 0..p {
        let lo = extents.iter().map(|e| e[i].0).fold(f64::INFINITY, f64::min);
        let hi = extents.iter().map(|e| e[i].1).fold(f64::NEG_INFINITY, f64::max);
        let scale = extents.iter().map(|e| (e[i].1 - e[i].0) / width_per_scale).fold(f64::INFINITY, f64::min);
        let n = ((hi - lo) / scale * spec.nodes_per_scale).ceil() as usize + 1;
        ranges.push((lo, hi));
        nodes.push(n.clamp(spec.min_nodes, spec.max_nodes) | 1);
    }
    GridGeometry::uniform(&ranges, &nodes)
}

/// Boltzmann density on a grid sized from the potential itself, widened on boundary failures.
pub fn boltzmann_auto(potential: &EffectivePotential, spec: &GridSpec) -> Result<DensityGrid> {
    let mut spec = *spec;
    for _ in 0..6 {
        let geometry = covering_geometry(&[potential.extent(spec.rise)?], &spec)?;
        match boltzmann_density(potential, &geometry) {
            Err(Error::BoundaryMass(_)) => spec.rise *= 1.5,
            other => return other,
        }
    }
    Err(Error::BoundaryMass(f64::NAN))
}

/// Probability current `J = −ρ(∂U+αθ) − (T/2) ∂·((D+β²)ρ)` (time in units of λ·steps).
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub geometry: Arc<GridGeometry>,
    /// Row-major `len × p`.
    pub values: Vec<f64>,
}

impl CurrentField {
    /// Largest Euclidean norm over nodes at least two cells away from the boundary.
    pub fn max_interior_norm(&self) -> f64 {
        let p = self.geometry.dim();
        let shape = self.geometry.shape();
        (0..self.geometry.len())
            .filter(|&k| {
                let idx = if p == 1 { vec![k] } else { vec![k / shape[1], k % shape[1]] };
                idx.iter().zip(&shape).all(|(&i, &n)| i >= 2 && i + 2 < n)
            })
            .map(|k| self.values[k * p..(k + 1) * p].iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

pub fn probability_current(
    density: &DensityGrid,
    model: &LossModel,
    train: &SampleSet,
    params: &LangevinParams,
) -> Result<CurrentField> {
    let landscape = model.landscape(train)?;
    let geometry = density.geometry().clone();
    let p = geometry.dim();
    if p != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: p });
    }
    let rho = density.values();
    let n = geometry.len();
    // C ρ at every node, with C = D + β².
    let mut c_rho = vec![0.0; n * p * p];
    let mut drift = vec![0.0; n * p];
    for k in 0..n {
        let th = geometry.node(k);
        let c = regularized(&landscape.diffusion(&th), params.beta);
        for i in 0..p {
            for j in 0..p {
                c_rho[(k * p + i) * p + j] = c[(i, j)] * rho[k];
            }
        }
        let g = landscape.gradient(&th);
        for i in 0..p {
            drift[k * p + i] = -(g[i] + params.alpha * th[i]) * rho[k];
        }
    }
    let shape = geometry.shape();
    let axes = geometry.axes();
    let stride = |axis: usize| if p == 1 || axis == 1 { 1 } else { shape[1] };
    let index_on = |k: usize, axis: usize| if p == 1 { k } else if axis == 0 { k / shape[1] } else { k % shape[1] };
    let mut values = vec![0.0; n * p];
    for k in 0..n {
        for i in 0..p {
            let mut div = 0.0;
            for j in 0..p {
                let idx = index_on(k, j);
                let s = stride(j);
                let ax = &axes[j];
                let f = |kk: usize| c_rho[(kk * p + i) * p + j];
                div += if idx == 0 {
                    (f(k + s) - f(k)) / (ax[1] - ax[0])
                } else if idx == ax.len() - 1 {
                    (f(k) - f(k - s)) / (ax[idx] - ax[idx - 1])
                } else {
                    (f(k + s) - f(k - s)) / (ax[idx + 1] - ax[idx - 1])
                };
            }
            values[k * p + i] = drift[k * p + i] - 0.5 * params.temperature * div;
        }
    }
    Ok(CurrentField { geometry, values })
}
