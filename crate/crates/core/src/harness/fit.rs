//! Least-squares fit of `gap(T) = (a/T + b)·e^{−T/c}` with `a, c > 0`.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rss: f64,
    pub r_squared: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl GapFit {
    pub fn predict(&self, t: f64) -> f64 {
        gap_model(self.a, self.b, self.c, t)
    }
}

pub fn gap_model(a: f64, b: f64, c: f64, t: f64) -> f64 {
    (a / t + b) * (-t / c).exp()
}

/// Ordinary least squares for `a/T + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseLinearFit {
    pub a: f64,
    pub b: f64,
    pub rss: f64,
}

pub fn fit_inverse_linear(points: &[(f64, f64)]) -> Result<InverseLinearFit> {
    check_points(points, 2)?;
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, y) in points {
        let x = 1.0 / t;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if det.abs() <= f64::EPSILON * n * sxx {
        return Err(Error::Insufficient("temperatures are not distinct enough".into()));
    }
    let a = (n * sxy - sx * sy) / det;
    let b = (sy - a * sx) / n;
    let rss = points.iter().map(|&(t, y)| (a / t + b - y).powi(2)).sum();
    Ok(InverseLinearFit { a, b, rss })
}

fn check_points(points: &[(f64, f64)], min_distinct: usize) -> Result<()> {
    if points.iter().any(|&(t, y)| !(t > 0.0) || !t.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("fit points need positive temperatures and finite gaps".into()));
    }
    let mut ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.len() < min_distinct {
        return Err(Error::Insufficient(format!("need {min_distinct} distinct temperatures, have {}", ts.len())));
    }
    Ok(())
}

const GRADIENT_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 500;

/// Levenberg–Marquardt in `(ln a, b, ln c)`. Without `init`, starts from the `a/T + b` fit with
/// `c` at ten times the largest temperature.
pub fn fit_gap_model(points: &[(f64, f64)], init: Option<(f64, f64, f64)>) -> Result<GapFit> {
    check_points(points, 4)?;
    let t_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let t_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let (a0, b0, c0) = match init {
        Some((a, b, c)) => {
            if !(a > 0.0) || !(c > 0.0) {
                return Err(Error::InvalidArgument("initial a and c must be positive".into()));
            }
            (a, b, c)
        }
        None => {
            let lin = fit_inverse_linear(points)?;
            let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            (lin.a.max(1e-6 * scale * t_min), lin.b, 10.0 * t_max)
        }
    };
    let residuals = |p: &Vector3<f64>| -> Vec<f64> {
        let (a, c) = (p[0].exp(), p[2].exp());
        points.iter().map(|&(t, y)| gap_model(a, p[1], c, t) - y).collect()
    };
    let jacobian_rows = |p: &Vector3<f64>| -> Vec<Vector3<f64>> {
        let (a, b, c) = (p[0].exp(), p[1], p[2].exp());
        points
            .iter()
            .map(|&(t, _)| {
                let e = (-t / c).exp();
                // ∂/∂ln a, ∂/∂b, ∂/∂ln c
                Vector3::new(a / t * e, e, (a / t + b) * e * t / c)
            })
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    let mut p = Vector3::new(a0.ln(), b0, c0.ln());
    let mut r = residuals(&p);
    let mut current = cost(&r);
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let rows = jacobian_rows(&p);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (row, ri) in rows.iter().zip(&r) {
            jtj += row * row.transpose();
            jtr += row * *ri;
        }
        if jtr.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        let mut improved = false;
        while damping < 1e20 {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += damping * jtj[(k, k)].max(1e-30);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial = p + step;
            let rt = residuals(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct < current {
                let stalled = current - ct <= 1e-15 * current && step.norm() <= 1e-12 * (1.0 + p.norm());
                p = trial;
                r = rt;
                current = ct;
                damping = (damping / 10.0).max(1e-15);
                improved = true;
                if stalled {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No descent direction left in floating point: the iterate is stationary.
            converged = jtr.norm() <= 1e-8 * (1.0 + current.sqrt());
            break;
        }
    }
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    Ok(GapFit {
        a: p[0].exp(),
        b: p[1],
        c: p[2].exp(),
        rss: current,
        r_squared: if ss_tot > 0.0 { 1.0 - current / ss_tot } else { f64::NAN },
        converged,
        iterations,
    })
}
