//! Toy loss families with closed-form or cheap population statistics.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng, Stream};

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("parameter point has no coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("parameter point {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A list of equally sized examples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values cannot be split into examples of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_scalars(xs: &[f64]) -> Self {
        Self { dim: 1, data: xs.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptySet)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter().map(|x| x[j]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> SampleSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.get(i));
        }
        SampleSet { dim: self.dim, data }
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Model family together with its population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `l = ½(θ−x)²` with `x ~ N(mean, std²)`.
    GaussianMean { mean: f64, std: f64 },
    /// `l = ½(f(θ)−x)²` with `f(θ) = θ + amplitude·sin θ` and `x = f(target) + noise·ε`.
    NonlinearRegression1d { target: f64, amplitude: f64, noise: f64 },
    /// `l = ½(θ−x)ᵀA(θ−x)` with `x ~ N(mean, covariance)`.
    Quadratic2d { mean: [f64; 2], covariance: [[f64; 2]; 2], curvature: [[f64; 2]; 2] },
    /// Examples `[z₁, z₂, y]`, `z ~ N(0, I)`, `P(y=1|z) = σ(w·z)`; loss `ln(1+e^{−ỹ θ·z})`, `ỹ = 2y−1`.
    Logistic2d { weights: [f64; 2] },
}

impl Family {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        match self {
            Family::GaussianMean { mean, std } => {
                if !mean.is_finite() || !(*std >= 0.0) || !std.is_finite() {
                    return bad("GaussianMean needs a finite mean and a nonnegative std");
                }
            }
            Family::NonlinearRegression1d { target, amplitude, noise } => {
                if !target.is_finite() || !amplitude.is_finite() || !(*noise >= 0.0) {
                    return bad("NonlinearRegression1d parameters must be finite, noise nonnegative");
                }
            }
            Family::Quadratic2d { mean, covariance, curvature } => {
                let c = mat2(covariance);
                let a = mat2(curvature);
                if mean.iter().any(|v| !v.is_finite()) || !is_symmetric(&c) || !is_symmetric(&a) {
                    return bad("Quadratic2d needs a finite mean and symmetric matrices");
                }
                if min_eigenvalue(&c) < -1e-12 || min_eigenvalue(&a) < -1e-12 {
                    return bad("Quadratic2d matrices must be positive semidefinite");
                }
            }
            Family::Logistic2d { weights } => {
                if weights.iter().any(|v| !v.is_finite()) {
                    return bad("Logistic2d weights must be finite");
                }
            }
        }
        Ok(())
    }

    fn same_kind(&self, other: &Family) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

/// A loss family, its training-population parameters and optionally a shifted test population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_population: Option<Family>,
}

/// Which population or sample set a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Biased covariance of per-example gradients at a parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCovariance {
    pub matrix: DMatrix<f64>,
    pub at_theta: Vec<f64>,
}

impl LossModel {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        Ok(Self { family, test_population: None })
    }

    /// Same loss, different test distribution. Loss-shape parameters (curvature, link amplitude)
    /// are always taken from the training family.
    pub fn with_test_population(mut self, population: Family) -> Result<Self> {
        population.validate()?;
        if !self.family.same_kind(&population) {
            return Err(Error::InvalidArgument("test population must belong to the same family".into()));
        }
        self.test_population = Some(population);
        Ok(self)
    }

    pub fn gaussian_mean(mean: f64, std: f64) -> Result<Self> {
        Self::new(Family::GaussianMean { mean, std })
    }

    pub fn nonlinear_regression(target: f64, amplitude: f64, noise: f64) -> Result<Self> {
        Self::new(Family::NonlinearRegression1d { target, amplitude, noise })
    }

    pub fn has_distribution_shift(&self) -> bool {
        self.test_population.as_ref().is_some_and(|p| p != &self.family)
    }

    pub fn population(&self, split: Split) -> &Family {
        match split {
            Split::Train => &self.family,
            Split::Test => self.test_population.as_ref().unwrap_or(&self.family),
        }
    }

    /// Parameter dimension p.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::GaussianMean { .. } | Family::NonlinearRegression1d { .. } => 1,
            Family::Quadratic2d { .. } | Family::Logistic2d { .. } => 2,
        }
    }

    /// Width of one example.
    pub fn sample_dim(&self) -> usize {
        match self.family {
            Family::GaussianMean { .. } | Family::NonlinearRegression1d { .. } => 1,
            Family::Quadratic2d { .. } => 2,
            Family::Logistic2d { .. } => 3,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.family, Family::Logistic2d { .. })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("θ = {theta:?}")));
        }
        Ok(())
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sample_dim() {
            return Err(Error::DimensionMismatch { expected: self.sample_dim(), got: x.len() });
        }
        Ok(())
    }

    fn check_set(&self, set: &SampleSet) -> Result<()> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        if set.dim() != self.sample_dim() {
            return Err(Error::DimensionMismatch { expected: self.sample_dim(), got: set.dim() });
        }
        Ok(())
    }

    pub fn per_example_loss(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_sample(x)?;
        Ok(self.loss_unchecked(theta, x))
    }

    pub fn loss_gradient(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_sample(x)?;
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(theta, x, &mut g);
        Ok(g)
    }

    pub fn loss_hessian(&self, theta: &[f64], x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        self.check_sample(x)?;
        let p = self.dim();
        let mut h = vec![0.0; p * p];
        self.hessian_into(theta, x, &mut h);
        Ok(DMatrix::from_row_slice(p, p, &h))
    }

    pub(crate) fn loss_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        match &self.family {
            Family::GaussianMean { .. } => 0.5 * (theta[0] - x[0]).powi(2),
            Family::NonlinearRegression1d { amplitude, .. } => {
                0.5 * (link(theta[0], *amplitude) - x[0]).powi(2)
            }
            Family::Quadratic2d { curvature: a, .. } => {
                let y = [theta[0] - x[0], theta[1] - x[1]];
                0.5 * quad_form(a, &y)
            }
            Family::Logistic2d { .. } => softplus(-margin(theta, x)),
        }
    }

    pub(crate) fn gradient_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::GaussianMean { .. } => out[0] = theta[0] - x[0],
            Family::NonlinearRegression1d { amplitude, .. } => {
                let t = theta[0];
                out[0] = (link(t, *amplitude) - x[0]) * (1.0 + amplitude * t.cos());
            }
            Family::Quadratic2d { curvature: a, .. } => {
                let y = [theta[0] - x[0], theta[1] - x[1]];
                out[0] = a[0][0] * y[0] + a[0][1] * y[1];
                out[1] = a[1][0] * y[0] + a[1][1] * y[1];
            }
            Family::Logistic2d { .. } => {
                let ys = 2.0 * x[2] - 1.0;
                let s = sigmoid(-margin(theta, x));
                out[0] = -ys * s * x[0];
                out[1] = -ys * s * x[1];
            }
        }
    }

    /// Row-major p×p Hessian.
    pub(crate) fn hessian_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::GaussianMean { .. } => out[0] = 1.0,
            Family::NonlinearRegression1d { amplitude, .. } => {
                let t = theta[0];
                let d1 = 1.0 + amplitude * t.cos();
                let d2 = -amplitude * t.sin();
                out[0] = d1 * d1 + (link(t, *amplitude) - x[0]) * d2;
            }
            Family::Quadratic2d { curvature: a, .. } => {
                out.copy_from_slice(&[a[0][0], a[0][1], a[1][0], a[1][1]]);
            }
            Family::Logistic2d { .. } => {
                let m = margin(theta, x);
                let w = sigmoid(m) * sigmoid(-m);
                out.copy_from_slice(&[w * x[0] * x[0], w * x[0] * x[1], w * x[1] * x[0], w * x[1] * x[1]]);
            }
        }
    }

    /// Mean per-example loss over `set`.
    pub fn train_set_loss(&self, theta: &[f64], set: &SampleSet) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_set(set)?;
        Ok(set.iter().map(|x| self.loss_unchecked(theta, x)).sum::<f64>() / set.len() as f64)
    }

    /// Biased covariance of per-example gradients over `set`, by a direct two-pass sum.
    pub fn gradient_covariance(&self, theta: &[f64], set: &SampleSet) -> Result<GradientCovariance> {
        self.check_theta(theta)?;
        self.check_set(set)?;
        let p = self.dim();
        let n = set.len() as f64;
        let mut grads = vec![0.0; set.len() * p];
        for (i, x) in set.iter().enumerate() {
            self.gradient_into(theta, x, &mut grads[i * p..(i + 1) * p]);
        }
        let mut mean = vec![0.0; p];
        for g in grads.chunks_exact(p) {
            for k in 0..p {
                mean[k] += g[k] / n;
            }
        }
        let mut m = DMatrix::zeros(p, p);
        for g in grads.chunks_exact(p) {
            for r in 0..p {
                for c in 0..p {
                    m[(r, c)] += (g[r] - mean[r]) * (g[c] - mean[c]) / n;
                }
            }
        }
        Ok(GradientCovariance { matrix: m, at_theta: theta.to_vec() })
    }

    pub fn sample_population(&self, rng: &mut Rng, split: Split, n: usize) -> SampleSet {
        let mut data = Vec::with_capacity(n * self.sample_dim());
        let pop = self.population(split);
        for _ in 0..n {
            draw_example(pop, rng, &mut data);
        }
        SampleSet { dim: self.sample_dim(), data }
    }

    /// Population mean and variance of the per-example loss; closed form where available,
    /// Monte Carlo (logistic family) otherwise.
    pub fn population_loss_and_variance(
        &self,
        theta: &[f64],
        split: Split,
        n_mc: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        self.check_theta(theta)?;
        match self.population(split) {
            Family::GaussianMean { mean, std } => Ok(shifted_square_stats(theta[0] - mean, *std)),
            Family::NonlinearRegression1d { target, noise, .. } => {
                let amp = self.link_amplitude();
                Ok(shifted_square_stats(link(theta[0], amp) - link(*target, amp), *noise))
            }
            Family::Quadratic2d { mean, covariance, .. } => {
                let a = mat2(self.curvature());
                let s = mat2(covariance);
                let d = DVector::from_vec(vec![theta[0] - mean[0], theta[1] - mean[1]]);
                let as_ = &a * &s;
                let loss = 0.5 * ((d.transpose() * &a * &d)[(0, 0)] + as_.trace());
                let var = 0.5 * (&as_ * &as_).trace() + (d.transpose() * &as_ * &a * &d)[(0, 0)];
                Ok((loss, var))
            }
            Family::Logistic2d { .. } => self.population_loss_and_variance_mc(theta, split, n_mc, seed),
        }
    }

    /// Monte Carlo estimates (unbiased mean, 1/(n−1) variance) for every family.
    pub fn population_loss_and_variance_mc(
        &self,
        theta: &[f64],
        split: Split,
        n_mc: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        self.check_theta(theta)?;
        if n_mc < 2 {
            return Err(Error::Insufficient("Monte Carlo needs at least two draws".into()));
        }
        let mut rng = rng_for(seed, Stream::MonteCarlo);
        let pop = self.population(split);
        let mut buf = Vec::with_capacity(self.sample_dim());
        let (mut mean, mut m2) = (0.0, 0.0);
        for k in 0..n_mc {
            buf.clear();
            draw_example(pop, &mut rng, &mut buf);
            let l = self.loss_unchecked(theta, &buf);
            let delta = l - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (l - mean);
        }
        Ok((mean, m2 / (n_mc - 1) as f64))
    }

    /// Fraction of correctly classified examples (logistic family only).
    pub fn accuracy(&self, theta: &[f64], set: &SampleSet) -> Option<f64> {
        if !self.is_classifier() || set.is_empty() {
            return None;
        }
        let correct = set
            .iter()
            .filter(|x| ((theta[0] * x[0] + theta[1] * x[1]) > 0.0) == (x[2] > 0.5))
            .count();
        Some(correct as f64 / set.len() as f64)
    }

    /// A small synthetic data set whose mean and biased covariance equal the population's.
    pub fn mean_dataset(&self, split: Split) -> Result<SampleSet> {
        match self.population(split) {
            Family::GaussianMean { mean, std } => Ok(SampleSet::from_scalars(&[mean - std, mean + std])),
            Family::NonlinearRegression1d { target, noise, .. } => {
                let c = link(*target, self.link_amplitude());
                Ok(SampleSet::from_scalars(&[c - noise, c + noise]))
            }
            Family::Quadratic2d { mean, covariance, .. } => {
                let s = mat2(covariance);
                let l = psd_factor(&s)?;
                let scale = 2f64.sqrt();
                let mut rows = Vec::new();
                for k in 0..2 {
                    for sign in [-1.0, 1.0] {
                        rows.push(vec![
                            mean[0] + sign * scale * l[(0, k)],
                            mean[1] + sign * scale * l[(1, k)],
                        ]);
                    }
                }
                SampleSet::from_rows(&rows)
            }
            Family::Logistic2d { .. } => {
                Err(Error::Unsupported("the logistic family has no synthetic mean data set".into()))
            }
        }
    }

    pub fn landscape<'a>(&'a self, set: &'a SampleSet) -> Result<Landscape<'a>> {
        self.check_set(set)?;
        Ok(Landscape::new(self, set))
    }

    fn link_amplitude(&self) -> f64 {
        match self.family {
            Family::NonlinearRegression1d { amplitude, .. } => amplitude,
            _ => 0.0,
        }
    }

    fn curvature(&self) -> &[[f64; 2]; 2] {
        match &self.family {
            Family::Quadratic2d { curvature, .. } => curvature,
            _ => unreachable!("curvature is only defined for the quadratic family"),
        }
    }
}

/// The empirical loss over one sample set, with the aggregate quantities SGD and the
/// steady-state construction need. Families whose set loss depends on the data only through
/// its first two moments are evaluated from those moments.
#[derive(Debug, Clone)]
pub struct Landscape<'a> {
    model: &'a LossModel,
    set: &'a SampleSet,
    moments: Option<Moments>,
}

#[derive(Debug, Clone)]
struct Moments {
    mean: Vec<f64>,
    /// Biased covariance, row-major.
    cov: Vec<f64>,
}

impl<'a> Landscape<'a> {
    fn new(model: &'a LossModel, set: &'a SampleSet) -> Self {
        let moments = match model.family {
            Family::Logistic2d { .. } => None,
            _ => Some(moments_of(set)),
        };
        Self { model, set, moments }
    }

    pub fn model(&self) -> &LossModel {
        self.model
    }

    pub fn set(&self) -> &SampleSet {
        self.set
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        match (&self.model.family, &self.moments) {
            (Family::GaussianMean { .. }, Some(m)) => 0.5 * ((theta[0] - m.mean[0]).powi(2) + m.cov[0]),
            (Family::NonlinearRegression1d { amplitude, .. }, Some(m)) => {
                0.5 * ((link(theta[0], *amplitude) - m.mean[0]).powi(2) + m.cov[0])
            }
            (Family::Quadratic2d { curvature: a, .. }, Some(m)) => {
                let y = [theta[0] - m.mean[0], theta[1] - m.mean[1]];
                let tr = a[0][0] * m.cov[0] + a[0][1] * m.cov[2] + a[1][0] * m.cov[1] + a[1][1] * m.cov[3];
                0.5 * (quad_form(a, &y) + tr)
            }
            _ => self.set.iter().map(|x| self.model.loss_unchecked(theta, x)).sum::<f64>() / self.set.len() as f64,
        }
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match (&self.model.family, &self.moments) {
            (Family::Logistic2d { .. }, _) | (_, None) => {
                let p = self.dim();
                let mut acc = vec![0.0; p];
                let mut g = vec![0.0; p];
                for x in self.set.iter() {
                    self.model.gradient_into(theta, x, &mut g);
                    for k in 0..p {
                        acc[k] += g[k];
                    }
                }
                let n = self.set.len() as f64;
                acc.iter().map(|v| v / n).collect()
            }
            (_, Some(m)) => {
                // Loss is quadratic (or quadratic in the link) in the data, so the gradient of
                // the mean loss is the gradient at the mean example.
                let mut g = vec![0.0; self.dim()];
                self.model.gradient_into(theta, &m.mean, &mut g);
                g
            }
        }
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = self.dim();
        let mut h = vec![0.0; p * p];
        match &self.moments {
            Some(m) => self.model.hessian_into(theta, &m.mean, &mut h),
            None => {
                let mut hx = vec![0.0; p * p];
                for x in self.set.iter() {
                    self.model.hessian_into(theta, x, &mut hx);
                    for k in 0..p * p {
                        h[k] += hx[k];
                    }
                }
                let n = self.set.len() as f64;
                h.iter_mut().for_each(|v| *v /= n);
            }
        }
        DMatrix::from_row_slice(p, p, &h)
    }

    /// Per-example gradient covariance D(θ).
    pub fn diffusion(&self, theta: &[f64]) -> DMatrix<f64> {
        match (&self.model.family, &self.moments) {
            (Family::GaussianMean { .. }, Some(m)) => DMatrix::from_element(1, 1, m.cov[0]),
            (Family::NonlinearRegression1d { amplitude, .. }, Some(m)) => {
                let d1 = 1.0 + amplitude * theta[0].cos();
                DMatrix::from_element(1, 1, d1 * d1 * m.cov[0])
            }
            (Family::Quadratic2d { curvature: a, .. }, Some(m)) => {
                let a = mat2(a);
                let s = DMatrix::from_row_slice(2, 2, &m.cov);
                &a * s * &a
            }
            _ => {
                let (_, d) = self.gradient_moments(theta);
                d
            }
        }
    }

    /// Divergence of D: `(∂·D)_i = Σ_j ∂_j D_ij`.
    pub fn diffusion_divergence(&self, theta: &[f64]) -> Vec<f64> {
        match (&self.model.family, &self.moments) {
            (Family::GaussianMean { .. }, Some(_)) | (Family::Quadratic2d { .. }, Some(_)) => vec![0.0; self.dim()],
            (Family::NonlinearRegression1d { amplitude, .. }, Some(m)) => {
                let t = theta[0];
                let d1 = 1.0 + amplitude * t.cos();
                let d2 = -amplitude * t.sin();
                vec![2.0 * d1 * d2 * m.cov[0]]
            }
            _ => {
                // ∂_j D_ij = E[H_ij g_j + g_i H_jj] − (H̄_ij ḡ_j + ḡ_i H̄_jj), summed over j.
                let p = self.dim();
                let n = self.set.len() as f64;
                let mut g = vec![0.0; p];
                let mut h = vec![0.0; p * p];
                let mut gbar = vec![0.0; p];
                let mut hbar = vec![0.0; p * p];
                let mut first = vec![0.0; p];
                for x in self.set.iter() {
                    self.model.gradient_into(theta, x, &mut g);
                    self.model.hessian_into(theta, x, &mut h);
                    let tr: f64 = (0..p).map(|j| h[j * p + j]).sum();
                    for i in 0..p {
                        let hg: f64 = (0..p).map(|j| h[i * p + j] * g[j]).sum();
                        first[i] += (hg + g[i] * tr) / n;
                        gbar[i] += g[i] / n;
                    }
                    for k in 0..p * p {
                        hbar[k] += h[k] / n;
                    }
                }
                let tr: f64 = (0..p).map(|j| hbar[j * p + j]).sum();
                (0..p)
                    .map(|i| {
                        let hg: f64 = (0..p).map(|j| hbar[i * p + j] * gbar[j]).sum();
                        first[i] - hg - gbar[i] * tr
                    })
                    .collect()
            }
        }
    }

    /// Mean gradient and biased gradient covariance from one pass over the examples.
    fn gradient_moments(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let p = self.dim();
        let n = self.set.len() as f64;
        let mut g = vec![0.0; p];
        let mut mean = vec![0.0; p];
        let mut second = DMatrix::zeros(p, p);
        for x in self.set.iter() {
            self.model.gradient_into(theta, x, &mut g);
            for r in 0..p {
                mean[r] += g[r] / n;
                for c in 0..p {
                    second[(r, c)] += g[r] * g[c] / n;
                }
            }
        }
        for r in 0..p {
            for c in 0..p {
                second[(r, c)] -= mean[r] * mean[c];
            }
        }
        (mean, second)
    }

    /// Stationary point of `U(θ) + ½α|θ|²`: bisection in one dimension, damped Newton otherwise.
    pub fn regularized_minimizer(&self, alpha: f64) -> Result<Vec<f64>> {
        let force = |t: f64| self.gradient(&[t])[0] + alpha * t;
        if self.dim() == 1 {
            let mut lo = -1.0;
            let mut hi = 1.0;
            let mut grow = 0;
            while force(lo) > 0.0 || force(hi) < 0.0 {
                lo *= 2.0;
                hi *= 2.0;
                grow += 1;
                if grow > 60 {
                    return Err(Error::NonFinite("no sign change bracketing the minimizer".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if force(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                    break;
                }
            }
            return Ok(vec![0.5 * (lo + hi)]);
        }
        let p = self.dim();
        let objective = |t: &[f64]| self.loss(t) + 0.5 * alpha * t.iter().map(|v| v * v).sum::<f64>();
        let mut theta = vec![0.0; p];
        for _ in 0..200 {
            let g = DVector::from_iterator(p, self.gradient(&theta).iter().zip(&theta).map(|(g, t)| g + alpha * t));
            if g.norm() < 1e-13 {
                break;
            }
            let h = self.hessian(&theta) + DMatrix::identity(p, p) * alpha;
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => g.clone(),
            };
            let f0 = objective(&theta);
            let mut scale = 1.0;
            loop {
                let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - scale * s).collect();
                if objective(&trial) <= f0 || scale < 1e-12 {
                    theta = trial;
                    break;
                }
                scale *= 0.5;
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("minimizer search diverged".into()));
        }
        Ok(theta)
    }
}

fn moments_of(set: &SampleSet) -> Moments {
    let d = set.dim();
    let n = set.len() as f64;
    let mut mean = vec![0.0; d];
    for x in set.iter() {
        for k in 0..d {
            mean[k] += x[k] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for x in set.iter() {
        for r in 0..d {
            for c in 0..d {
                cov[r * d + c] += (x[r] - mean[r]) * (x[c] - mean[c]) / n;
            }
        }
    }
    Moments { mean, cov }
}

fn draw_example(pop: &Family, rng: &mut Rng, out: &mut Vec<f64>) {
    match pop {
        Family::GaussianMean { mean, std } => {
            let e: f64 = rng.sample(StandardNormal);
            out.push(mean + std * e);
        }
        Family::NonlinearRegression1d { target, amplitude, noise } => {
            let e: f64 = rng.sample(StandardNormal);
            out.push(link(*target, *amplitude) + noise * e);
        }
        Family::Quadratic2d { mean, covariance, .. } => {
            let l = psd_factor(&mat2(covariance)).expect("validated covariance");
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            out.push(mean[0] + l[(0, 0)] * e0 + l[(0, 1)] * e1);
            out.push(mean[1] + l[(1, 0)] * e0 + l[(1, 1)] * e1);
        }
        Family::Logistic2d { weights } => {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let y = if u < sigmoid(weights[0] * z0 + weights[1] * z1) { 1.0 } else { 0.0 };
            out.extend_from_slice(&[z0, z1, y]);
        }
    }
}

/// Mean and variance of `½y²` for `y ~ N(d, s²)`.
fn shifted_square_stats(d: f64, s: f64) -> (f64, f64) {
    (0.5 * (d * d + s * s), d * d * s * s + 0.5 * s.powi(4))
}

pub fn link(theta: f64, amplitude: f64) -> f64 {
    theta + amplitude * theta.sin()
}

fn margin(theta: &[f64], x: &[f64]) -> f64 {
    (2.0 * x[2] - 1.0) * (theta[0] * x[0] + theta[1] * x[1])
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn quad_form(a: &[[f64; 2]; 2], y: &[f64; 2]) -> f64 {
    y[0] * (a[0][0] * y[0] + a[0][1] * y[1]) + y[1] * (a[1][0] * y[0] + a[1][1] * y[1])
}

fn mat2(m: &[[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Factor `L` with `L Lᵀ = S` for a positive semidefinite `S` (symmetric square root).
pub(crate) fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::linalg::psd_sqrt(s)
}
