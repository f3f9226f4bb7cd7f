use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric square root of a positive semidefinite matrix. Eigenvalues down to
/// `-1e-10·max(1, ‖S‖)` are treated as rounding noise and clamped to zero.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = s.clone().symmetric_eigen();
    let tol = 1e-10 * s.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `D + β²I`.
pub fn regularized(d: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    d + DMatrix::identity(d.nrows(), d.ncols()) * (beta * beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let r = psd_sqrt(&s).unwrap();
        assert!((&r * &r - &s).amax() < 1e-13);
    }

    #[test]
    fn rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_sqrt(&s), Err(Error::NotPositiveSemidefinite(_))));
    }
}
