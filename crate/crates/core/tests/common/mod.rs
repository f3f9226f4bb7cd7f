//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gaplab::toy_models::{Family, LossModel, SampleSet};

/// Abramowitz-Stegun style erfc via the Numerical Recipes Chebyshev fit (|rel err| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Biased (1/n) variance, computed in two passes.
pub fn biased_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn unbiased_var(xs: &[f64]) -> f64 {
    biased_var(xs) * xs.len() as f64 / (xs.len() - 1) as f64
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Every family with representative parameters.
pub fn all_models() -> Vec<LossModel> {
    vec![
        LossModel::gaussian_mean(0.7, 1.3).unwrap(),
        LossModel::nonlinear_regression(0.5, 0.3, 0.4).unwrap(),
        LossModel::new(Family::Quadratic2d {
            mean: [0.2, -0.4],
            covariance: [[1.0, 0.3], [0.3, 0.5]],
            curvature: [[2.0, 0.4], [0.4, 1.0]],
        })
        .unwrap(),
        LossModel::new(Family::Logistic2d { weights: [1.5, -0.8] }).unwrap(),
    ]
}

/// Train set of a GaussianMean data set as plain numbers.
pub fn scalars(set: &SampleSet) -> Vec<f64> {
    set.column(0)
}

use gaplab::averaging::AveragingEnsemble;
use gaplab::data_sampling::{resample_datasets, DataSetPair, SamplingMode};
use gaplab::grid::{BoundaryPolicy, DensityGrid, GridGeometry};
use gaplab::langevin::LangevinParams;
use gaplab::rng::{rng_for, Stream};
use gaplab::steady_state::GridSpec;
use rand::Rng as _;

/// Plain-SGD Boltzmann ensemble on GaussianMean data.
pub fn gm_ensemble(
    mean: f64,
    std: f64,
    n: usize,
    params: LangevinParams,
    m: usize,
    mode: SamplingMode,
    seed: u64,
) -> AveragingEnsemble {
    let model = LossModel::gaussian_mean(mean, std).unwrap();
    let data = resample_datasets(&model, mode, n, n, m, seed).unwrap();
    AveragingEnsemble::sgd_boltzmann(&model, data, &params, &GridSpec::default()).unwrap()
}

/// Random one-dimensional quartic potentials `g_i(θ) = c4 (θ−b_i)⁴ + c2 (θ−b_i)² + c1 θ`,
/// with the offsets `b_i` tied to each data set's train mean. Returns the ensemble of
/// their Boltzmann densities and the tabulated potentials.
pub fn quartic_ensemble(m: usize, seed: u64) -> (AveragingEnsemble, Vec<Vec<f64>>) {
    let model = LossModel::gaussian_mean(0.0, 1.0).unwrap();
    let mut rng = rng_for(seed, Stream::MonteCarlo);
    let n = rng.random_range(2..20usize);
    let data: Vec<DataSetPair> = resample_datasets(&model, SamplingMode::IidFresh, n, n, m, seed).unwrap();
    let c4 = rng.random_range(0.1..20.0);
    let c2 = rng.random_range(-2.0..5.0);
    let c1 = rng.random_range(-1.0..1.0);
    let sharpness = rng.random_range(0.5..4.0);
    let geometry = GridGeometry::uniform(&[(-6.0, 6.0)], &[1201]).unwrap();
    let rows: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            let b = mean(&d.train.column(0));
            geometry
                .nodes()
                .map(|th| {
                    let u = th[0] - b;
                    sharpness * (c4 * u.powi(4) + c2 * u * u + c1 * th[0])
                })
                .collect()
        })
        .collect();
    let densities: Vec<DensityGrid> = rows
        .iter()
        .map(|g| {
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            DensityGrid::from_log_values(geometry.clone(), &neg, BoundaryPolicy::Enforce).unwrap()
        })
        .collect();
    (AveragingEnsemble::new(model, data, densities).unwrap(), rows)
}

/// Gauss-Hermite rule for the standard normal (probabilists' weight), by Golub-Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = nalgebra::DMatrix::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let weights = (0..n).map(|k| eig.eigenvectors[(0, k)].powi(2)).collect();
    (eig.eigenvalues.iter().copied().collect(), weights)
}

/// `E f(X)` for `X ~ N(mean, cov)` in two dimensions by a tensor Gauss-Hermite rule.
pub fn gaussian_expectation_2d(
    f: impl Fn(&[f64]) -> f64,
    mean: &nalgebra::DVector<f64>,
    cov: &nalgebra::DMatrix<f64>,
) -> f64 {
    let (z, w) = gauss_hermite(12);
    let l = cov.clone().cholesky().expect("positive definite").l();
    let mut total = 0.0;
    for (z0, w0) in z.iter().zip(&w) {
        for (z1, w1) in z.iter().zip(&w) {
            let x = mean + &l * nalgebra::DVector::from_vec(vec![*z0, *z1]);
            total += w0 * w1 * f(x.as_slice());
        }
    }
    total
}
