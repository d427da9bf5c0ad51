//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singularity threshold used throughout the crate.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Smallest eigenvalue of a symmetric matrix (Householder tridiagonalisation + implicit QL/QR).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Reciprocal condition number estimate in the 1-norm, via the explicit inverse.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let n1 = norm1(m);
    if n1 == 0.0 || !n1.is_finite() {
        return 0.0;
    }
    match m.clone().try_inverse() {
        Some(inv) => {
            let ni = norm1(&inv);
            if ni.is_finite() && ni > 0.0 { 1.0 / (n1 * ni) } else { 0.0 }
        }
        None => 0.0,
    }
}

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Inverse with the crate's singularity policy: refuse when `rcond < SINGULAR_RTOL`.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let rc = rcond(m);
    if !(rc >= SINGULAR_RTOL) {
        return Err(Error::Singular(format!("{what}: rcond = {rc:e}")));
    }
    m.clone().try_inverse().ok_or_else(|| Error::Singular(what.to_string()))
}

/// Adjugate via cofactors; well defined for singular matrices.
pub fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let minor = m.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = sign * minor.determinant();
        }
    }
    adj
}

/// Pairwise summation with a fixed association order, so results do not depend on scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
