//! Small dense-matrix helpers shared by the estimators and inference code.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Condition number above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a square matrix, refusing anything with condition number
/// above [`MAX_CONDITION`].
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(LinalgError::Singular { condition });
    }
    m.clone().lu().try_inverse().ok_or(LinalgError::Singular { condition })
}

/// Solves a square system with a column-pivoted QR, rejecting numerically
/// rank-deficient matrices instead of returning a pseudo-solution.
pub fn pivoted_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let tail = r.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if lead == 0.0 || tail <= lead * 1e-13 {
        let condition = if tail == 0.0 { f64::INFINITY } else { lead / tail };
        return Err(LinalgError::Singular { condition });
    }
    qr.solve(b).ok_or(LinalgError::Singular { condition: lead / tail })
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}
