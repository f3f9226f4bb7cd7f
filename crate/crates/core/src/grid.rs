//! Tensor-product grids carrying normalized densities.

use std::io::Write;
use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::quadrature::{log_sum_exp, trapezoid_weights};
use crate::rng::Rng;

/// Node coordinates and trapezoid weights, shared between all densities on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    axes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl GridGeometry {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Arc<Self>> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Unsupported(format!("{}-dimensional grids", axes.len())));
        }
        for ax in &axes {
            if ax.len() < 3 {
                return Err(Error::InvalidArgument("each axis needs at least three nodes".into()));
            }
            if ax.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument("axis nodes must be strictly increasing".into()));
            }
        }
        let per_axis: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
        let weights = match per_axis.as_slice() {
            [w] => w.clone(),
            [w0, w1] => w0.iter().flat_map(|a| w1.iter().map(move |b| a * b)).collect(),
            _ => unreachable!(),
        };
        Ok(Arc::new(Self { axes, weights }))
    }

    pub fn uniform(ranges: &[(f64, f64)], nodes: &[usize]) -> Result<Arc<Self>> {
        if ranges.len() != nodes.len() {
            return Err(Error::DimensionMismatch { expected: ranges.len(), got: nodes.len() });
        }
        let axes = ranges
            .iter()
            .zip(nodes)
            .map(|(&(lo, hi), &n)| uniform_axis(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Coordinates of node `k` (row-major: the last axis varies fastest).
    pub fn node(&self, k: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a[k]],
            [a, b] => vec![a[k / b.len()], b[k % b.len()]],
            _ => unreachable!(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|k| self.node(k))
    }

    /// True for nodes on the outer layer of the grid.
    pub fn is_boundary(&self, k: usize) -> bool {
        match self.axes.as_slice() {
            [a] => k == 0 || k == a.len() - 1,
            [a, b] => {
                let (i, j) = (k / b.len(), k % b.len());
                i == 0 || j == 0 || i == a.len() - 1 || j == b.len() - 1
            }
            _ => unreachable!(),
        }
    }

    /// Uniform refinement that keeps every existing node.
    pub fn refined(&self, factor: usize) -> Result<Arc<Self>> {
        let axes = self
            .axes
            .iter()
            .map(|a| {
                let mut out = Vec::with_capacity((a.len() - 1) * factor + 1);
                for w in a.windows(2) {
                    for s in 0..factor {
                        out.push(w[0] + (w[1] - w[0]) * s as f64 / factor as f64);
                    }
                }
                out.push(*a.last().unwrap());
                out
            })
            .collect();
        Self::new(axes)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

pub fn uniform_axis(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(hi > lo) || n < 3 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("bad axis [{lo}, {hi}] with {n} nodes")));
    }
    Ok((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect())
}

/// Whether `boltzmann`-style constructors insist that the density vanish at the grid edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPolicy {
    Enforce,
    Ignore,
}

/// Relative boundary value above which a grid is considered too small.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    geometry: Arc<GridGeometry>,
    values: Vec<f64>,
    log_z: f64,
}

impl DensityGrid {
    /// Normalizes `exp(log_values)` with the grid weights; `log_z` is the log of the normalizer.
    pub fn from_log_values(geometry: Arc<GridGeometry>, log_values: &[f64], policy: BoundaryPolicy) -> Result<Self> {
        if log_values.len() != geometry.len() {
            return Err(Error::DimensionMismatch { expected: geometry.len(), got: log_values.len() });
        }
        if let Some(k) = log_values.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite(format!("log density at node {:?}", geometry.node(k))));
        }
        let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite("density vanishes on the whole grid".into()));
        }
        if policy == BoundaryPolicy::Enforce {
            let edge = (0..geometry.len())
                .filter(|&k| geometry.is_boundary(k))
                .map(|k| log_values[k])
                .fold(f64::NEG_INFINITY, f64::max);
            let rel = (edge - max).exp();
            if rel > BOUNDARY_TOLERANCE {
                return Err(Error::BoundaryMass(rel));
            }
        }
        let log_z = log_sum_exp(
            log_values.iter().zip(geometry.weights()).map(|(l, w)| if *w > 0.0 { l + w.ln() } else { f64::NEG_INFINITY }),
        );
        let values = log_values.iter().map(|l| (l - log_z).exp()).collect();
        Ok(Self { geometry, values, log_z })
    }

    /// Normalizes nonnegative values.
    pub fn from_values(geometry: Arc<GridGeometry>, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::DimensionMismatch { expected: geometry.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("density values must be finite and nonnegative".into()));
        }
        let z = geometry.integrate(&values);
        if !(z > 0.0) {
            return Err(Error::NonFinite("density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / z).collect();
        Ok(Self { geometry, values, log_z: z.ln() })
    }

    pub fn geometry(&self) -> &Arc<GridGeometry> {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.geometry.integrate(&self.values)
    }

    /// `∫ρ f` by quadrature, with `f` given at the nodes.
    pub fn integrate(&self, f_at_nodes: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(f_at_nodes)
            .zip(self.geometry.weights())
            .map(|((r, f), w)| r * f * w)
            .sum()
    }

    pub fn expectation(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let fv: Vec<f64> = self.geometry.nodes().map(|x| f(&x)).collect();
        self.integrate(&fv)
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.expectation(|x| x[i])).collect()
    }

    /// Covariance matrix, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let m = self.mean();
        let p = self.dim();
        let mut out = vec![0.0; p * p];
        for r in 0..p {
            for c in 0..p {
                out[r * p + c] = self.expectation(|x| (x[r] - m[r]) * (x[c] - m[c]));
            }
        }
        out
    }

    /// `½ Σ_k w_k |ρ_k − σ_k|`.
    pub fn total_variation(&self, other: &DensityGrid) -> Result<f64> {
        if self.geometry != other.geometry {
            return Err(Error::InvalidArgument("densities live on different grids".into()));
        }
        Ok(0.5
            * self
                .values
                .iter()
                .zip(&other.values)
                .zip(self.geometry.weights())
                .map(|((a, b), w)| (a - b).abs() * w)
                .sum::<f64>())
    }

    fn axis_1d(&self) -> Result<&[f64]> {
        match self.geometry.axes() {
            [a] => Ok(a),
            _ => Err(Error::Unsupported("this operation is one-dimensional".into())),
        }
    }

    /// CDF of the piecewise-linear interpolant of the density (mass outside the grid is zero).
    pub fn cdf_1d(&self) -> Result<impl Fn(f64) -> f64 + '_> {
        let x = self.axis_1d()?;
        let mut cum = vec![0.0; x.len()];
        for k in 1..x.len() {
            cum[k] = cum[k - 1] + 0.5 * (x[k] - x[k - 1]) * (self.values[k - 1] + self.values[k]);
        }
        let total = *cum.last().unwrap();
        Ok(move |t: f64| {
            if t <= x[0] {
                return 0.0;
            }
            if t >= x[x.len() - 1] {
                return 1.0;
            }
            let k = x.partition_point(|&v| v <= t) - 1;
            let h = x[k + 1] - x[k];
            let s = t - x[k];
            let (a, b) = (self.values[k], self.values[k + 1]);
            (cum[k] + s * a + 0.5 * s * s * (b - a) / h) / total
        })
    }

    /// Independent draws from the piecewise-linear interpolant.
    pub fn sample_1d(&self, rng: &mut Rng, n: usize) -> Result<Vec<f64>> {
        let x = self.axis_1d()?;
        let mut cum = vec![0.0; x.len()];
        for k in 1..x.len() {
            cum[k] = cum[k - 1] + 0.5 * (x[k] - x[k - 1]) * (self.values[k - 1] + self.values[k]);
        }
        let total = *cum.last().unwrap();
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let k = (cum.partition_point(|&c| c <= u).max(1) - 1).min(x.len() - 2);
                let (a, b) = (self.values[k], self.values[k + 1]);
                let h = x[k + 1] - x[k];
                let r = u - cum[k];
                // Solve a s + (b − a) s²/(2h) = r for s in [0, h].
                let slope = (b - a) / h;
                let s = if slope.abs() < 1e-14 * (a + b + 1e-300) / h {
                    if a > 0.0 { r / a } else { 0.5 * h }
                } else {
                    let disc = (a * a + 2.0 * slope * r).max(0.0);
                    2.0 * r / (a + disc.sqrt())
                };
                x[k] + s.clamp(0.0, h)
            })
            .collect())
    }

    /// CSV with one column per coordinate, then `density` and `weight`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|i| format!("theta_{i}")).collect();
        header.push("density".into());
        header.push("weight".into());
        w.write_record(&header)?;
        for (k, node) in self.geometry.nodes().enumerate() {
            let mut row: Vec<String> = node.iter().map(|v| v.to_string()).collect();
            row.push(self.values[k].to_string());
            row.push(self.geometry.weights()[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of `samples` on the grid's cells (nearest node), normalized over in-grid samples.
/// Returns the density and the fraction of samples that fell outside the grid.
pub fn empirical_density(samples: &[Vec<f64>], geometry: Arc<GridGeometry>) -> Result<(DensityGrid, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let p = geometry.dim();
    let mut counts = vec![0.0; geometry.len()];
    let mut leaked = 0usize;
    for s in samples {
        if s.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: s.len() });
        }
        let mut idx = Vec::with_capacity(p);
        for (ax, &x) in geometry.axes().iter().zip(s) {
            match nearest_node(ax, x) {
                Some(i) => idx.push(i),
                None => break,
            }
        }
        if idx.len() < p {
            leaked += 1;
            continue;
        }
        let k = if p == 1 { idx[0] } else { idx[0] * geometry.axes()[1].len() + idx[1] };
        counts[k] += 1.0;
    }
    let inside = (samples.len() - leaked) as f64;
    if inside == 0.0 {
        return Err(Error::Insufficient("every sample fell outside the grid".into()));
    }
    let values: Vec<f64> = counts.iter().zip(geometry.weights()).map(|(c, w)| c / (inside * w)).collect();
    let density = DensityGrid::from_values(geometry, values)?;
    Ok((density, leaked as f64 / samples.len() as f64))
}

fn nearest_node(axis: &[f64], x: f64) -> Option<usize> {
    let n = axis.len();
    if !(x >= axis[0] && x <= axis[n - 1]) {
        return None;
    }
    let k = axis.partition_point(|&v| v <= x);
    if k == 0 {
        return Some(0);
    }
    if k == n {
        return Some(n - 1);
    }
    Some(if x - axis[k - 1] <= axis[k] - x { k - 1 } else { k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_on_constant_log_values() {
        let g = GridGeometry::uniform(&[(0.0, 2.0)], &[21]).unwrap();
        let d = DensityGrid::from_log_values(g, &[3.0; 21], BoundaryPolicy::Ignore).unwrap();
        assert!(d.values().iter().all(|v| (v - 0.5).abs() < 1e-14));
        assert!((d.log_z() - (3.0 + 2f64.ln())).abs() < 1e-13);
    }

    #[test]
    fn boundary_policy_flags_wide_densities() {
        let g = GridGeometry::uniform(&[(-1.0, 1.0)], &[21]).unwrap();
        let logv: Vec<f64> = g.nodes().map(|x| -x[0] * x[0]).collect();
        assert!(matches!(
            DensityGrid::from_log_values(g, &logv, BoundaryPolicy::Enforce),
            Err(Error::BoundaryMass(_))
        ));
    }

    #[test]
    fn two_dimensional_layout_is_row_major() {
        let g = GridGeometry::uniform(&[(0.0, 1.0), (10.0, 12.0)], &[3, 5]).unwrap();
        assert_eq!(g.node(7), vec![0.5, 11.0]);
        assert!(g.is_boundary(0) && !g.is_boundary(7) && g.is_boundary(9));
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn refinement_keeps_nodes() {
        let g = GridGeometry::uniform(&[(0.0, 1.0)], &[3]).unwrap();
        let r = g.refined(2).unwrap();
        assert_eq!(r.axes()[0], vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn repeated_sample_is_a_point_mass() {
        let g = GridGeometry::uniform(&[(-1.0, 1.0)], &[11]).unwrap();
        let (d, leak) = empirical_density(&vec![vec![0.21]; 1000], g).unwrap();
        assert_eq!(leak, 0.0);
        let nonzero: Vec<usize> = (0..11).filter(|&k| d.values()[k] > 0.0).collect();
        assert_eq!(nonzero, vec![6]);
        assert!((d.total_mass() - 1.0).abs() < 1e-14);
    }
}
