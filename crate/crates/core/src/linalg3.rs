//! Small symmetric 3×3 helpers for preconditioners and gradient covariances.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;

pub fn symmetrize(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Negative eigenvalues from roundoff are clipped to zero.
pub fn sqrtm_psd(m: &Mat3) -> Mat3 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Mat3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn max_eigenvalue(m: &Mat3) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

pub fn is_spd(m: &Mat3) -> bool {
    let asym = (m - m.transpose()).abs().max();
    asym <= 1e-10 * m.abs().max().max(1e-300) && SymmetricEigen::new(symmetrize(m)).eigenvalues.min() > 0.0
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky_factor(m: &Mat3) -> Result<Mat3> {
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("matrix is not symmetric positive definite".into()))
}

/// Inverse of a symmetric matrix after raising every eigenvalue below
/// `floor · max|eigenvalue|` to that floor. Returns the inverse and whether any
/// eigenvalue had to be raised.
pub fn repaired_inverse(m: &Mat3, floor: f64) -> (Mat3, bool) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min_allowed = floor * top;
    let mut repaired = false;
    let inv = eig.eigenvalues.map(|v| {
        if v < min_allowed || v <= 0.0 {
            repaired = true;
            1.0 / min_allowed.max(f64::MIN_POSITIVE)
        } else {
            1.0 / v
        }
    });
    (eig.eigenvectors * Mat3::from_diagonal(&inv) * eig.eigenvectors.transpose(), repaired)
}

/// Sample covariance (denominator `m − 1`) of 3-vectors.
pub fn sample_covariance(rows: &[[f64; 3]]) -> Mat3 {
    let m = rows.len();
    if m < 2 {
        return Mat3::zeros();
    }
    let mean = rows.iter().fold(Vector3::zeros(), |acc, r| acc + Vector3::from(*r)) / m as f64;
    let mut c = Mat3::zeros();
    for r in rows {
        let d = Vector3::from(*r) - mean;
        c += d * d.transpose();
    }
    c / (m - 1) as f64
}
