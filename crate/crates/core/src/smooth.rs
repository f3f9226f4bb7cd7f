//! Scalar functions of θ with analytic first and second derivatives.

use nalgebra::{DMatrix, DVector};

pub trait Smooth: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `x ↦ c`.
pub struct Constant(pub f64);

impl Smooth for Constant {
    fn value(&self, _: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// `x ↦ xᵀAx + bᵀx + c` with symmetric `A`; `A = 0` gives an affine function.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl Quadratic {
    pub fn affine(b: Vec<f64>, c: f64) -> Self {
        let p = b.len();
        Self { a: DMatrix::zeros(p, p), b: DVector::from_vec(b), c }
    }

    pub fn coordinate(p: usize, i: usize) -> Self {
        let mut b = vec![0.0; p];
        b[i] = 1.0;
        Self::affine(b, 0.0)
    }

    /// `(x_i − m_i)(x_j − m_j)`.
    pub fn centered_product(center: &[f64], i: usize, j: usize) -> Self {
        let p = center.len();
        let mut a = DMatrix::zeros(p, p);
        a[(i, j)] += 0.5;
        a[(j, i)] += 0.5;
        let mut b = DVector::zeros(p);
        b[i] -= center[j];
        b[j] -= center[i];
        Self { a, b, c: center[i] * center[j] }
    }
}

impl Smooth for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * &self.a * &v)[(0, 0)] + self.b.dot(&v) + self.c
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (&self.a * &v * 2.0 + &self.b).iter().copied().collect()
    }
    fn hessian(&self, _: &[f64]) -> DMatrix<f64> {
        &self.a * 2.0
    }
}

/// A smooth function assembled from closures.
pub struct FnSmooth<F, G, H> {
    pub value: F,
    pub gradient: G,
    pub hessian: H,
}

impl<F, G, H> Smooth for FnSmooth<F, G, H>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
    H: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.hessian)(x)
    }
}
