//! Plug-in covariance components, the MPD sandwich covariance and
//! normal-approximation confidence intervals.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::{ComponentEstimates, TuningMatrix, WeightedDesign};
use crate::linalg::{self, LinalgError};
use crate::losses::{LossError, LossModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("Hessian is singular: {0}")]
    SingularHessian(LinalgError),
    #[error("variance of coordinate {coordinate} is negative ({value:e})")]
    InvalidVariance { coordinate: usize, value: f64 },
    #[error("no labelled units with positive weight")]
    InsufficientData,
    #[error("invalid tuning matrix: {0}")]
    InvalidTuning(String),
    #[error("alpha {0} not in (0, 1)")]
    InvalidLevel(f64),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceComponents {
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s22: DMatrix<f64>,
    pub s13: DMatrix<f64>,
    pub s33: DMatrix<f64>,
    pub h_theta: DMatrix<f64>,
    pub h_gamma: DMatrix<f64>,
}

fn add_outer(acc: &mut DMatrix<f64>, scale: f64, a: &[f64], b: &[f64]) {
    for (r, ar) in a.iter().enumerate() {
        for (c, bc) in b.iter().enumerate() {
            acc[(r, c)] += scale * ar * bc;
        }
    }
}

/// Plug-in estimates of the gradient covariances and Hessians. Gradients of
/// the labelled full rows are taken at `θ̂^II`; every proxy gradient is taken
/// at `γ̂^I`.
pub fn covariance_components(
    loss: &LossModel,
    design: &WeightedDesign,
    components: &ComponentEstimates,
) -> Result<CovarianceComponents, InferenceError> {
    if design.labelled_count() == 0 {
        return Err(InferenceError::InsufficientData);
    }
    let d = loss.dim();
    let n = design.n as f64;
    let theta = components.theta_ii.theta.as_slice();
    let gamma = components.gamma_i.theta.as_slice();
    let zeros = || DMatrix::zeros(d, d);
    let (mut s11, mut s12, mut s22, mut s13, mut s33) = (zeros(), zeros(), zeros(), zeros(), zeros());
    let mut g1 = vec![0.0; d];
    let mut g3 = vec![0.0; d];
    for ((x, xt), &w) in design.labelled_full.iter().zip(&design.labelled_proxy).zip(&design.weights) {
        if w == 0.0 {
            continue;
        }
        loss.gradient_into(theta, x, &mut g1);
        loss.gradient_into(gamma, xt, &mut g3);
        let w2 = w * w;
        add_outer(&mut s11, w2, &g1, &g1);
        add_outer(&mut s12, w2, &g1, &g3);
        add_outer(&mut s22, w2, &g3, &g3);
        add_outer(&mut s13, w, &g1, &g3);
    }
    for xt in &design.all_proxy {
        loss.gradient_into(gamma, xt, &mut g3);
        add_outer(&mut s33, 1.0, &g3, &g3);
    }
    let h_theta = loss.weighted_hessian_sum(theta, &design.labelled_full, &design.weights)? / n;
    let ones = vec![1.0; design.all_proxy.len()];
    let h_gamma = loss.weighted_hessian_sum(gamma, &design.all_proxy, &ones)? / n;
    Ok(CovarianceComponents { s11: s11 / n, s12: s12 / n, s22: s22 / n, s13: s13 / n, s33: s33 / n, h_theta, h_gamma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpdCovariance {
    pub sigma: DMatrix<f64>,
    pub omega_used: TuningMatrix,
    /// Smallest eigenvalue; negative values flag a non-PSD estimate.
    pub min_eigenvalue: f64,
}

impl MpdCovariance {
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= 0.0
    }
}

/// `Σ̂^MPD` for the given tuning matrix, symmetrised.
pub fn mpd_covariance(cov: &CovarianceComponents, omega: &TuningMatrix) -> Result<MpdCovariance, InferenceError> {
    let h_theta_inv = linalg::checked_inverse(&cov.h_theta).map_err(InferenceError::SingularHessian)?;
    let h_gamma_inv = linalg::checked_inverse(&cov.h_gamma).map_err(InferenceError::SingularHessian)?;
    let o = &omega.omega;
    if o.shape() != cov.h_theta.shape() {
        return Err(InferenceError::InvalidTuning(format!(
            "tuning matrix is {}x{}, parameter dimension is {}",
            o.nrows(),
            o.ncols(),
            cov.h_theta.nrows()
        )));
    }
    let base = &h_theta_inv * &cov.s11 * &h_theta_inv;
    let proxy = o * &h_gamma_inv * (&cov.s22 - &cov.s33) * &h_gamma_inv * o.transpose();
    let cross = &h_theta_inv * (&cov.s13 - &cov.s12) * &h_gamma_inv * o.transpose();
    let sigma = linalg::symmetrize(&(base + proxy + &cross + cross.transpose()));
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::SingularHessian(LinalgError::NonFinite));
    }
    let min_eigenvalue = linalg::min_eigenvalue(&sigma);
    if min_eigenvalue < 0.0 {
        log::debug!("MPD covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})");
    }
    Ok(MpdCovariance { sigma, omega_used: omega.clone(), min_eigenvalue })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub coordinate: usize,
    pub level: f64,
    pub estimate: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// `z_{1-α/2}` of the standard normal.
pub fn normal_quantile(alpha: f64) -> Result<f64, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidLevel(alpha));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// `θ̂_j ± z_{1-α/2} sqrt(Σ̂_jj / N)`.
pub fn confidence_interval(
    theta: &DVector<f64>,
    sigma: &DMatrix<f64>,
    n: usize,
    alpha: f64,
    j: usize,
) -> Result<ConfidenceInterval, InferenceError> {
    let variance = sigma[(j, j)];
    if !(variance >= 0.0) {
        return Err(InferenceError::InvalidVariance { coordinate: j, value: variance });
    }
    interval(theta[j], variance, n, alpha, j)
}

/// Like [`confidence_interval`] but clamps a negative variance to zero and
/// reports whether it did.
pub fn clamped_interval(
    estimate: f64,
    sigma: &DMatrix<f64>,
    n: usize,
    alpha: f64,
    j: usize,
) -> Result<(ConfidenceInterval, bool), InferenceError> {
    let raw = sigma[(j, j)];
    if raw.is_nan() {
        return Err(InferenceError::InvalidVariance { coordinate: j, value: raw });
    }
    let clamped = raw < 0.0;
    Ok((interval(estimate, raw.max(0.0), n, alpha, j)?, clamped))
}

fn interval(
    estimate: f64,
    variance: f64,
    n: usize,
    alpha: f64,
    j: usize,
) -> Result<ConfidenceInterval, InferenceError> {
    let z = normal_quantile(alpha)?;
    let half = z * (variance / n as f64).sqrt();
    Ok(ConfidenceInterval {
        coordinate: j,
        level: 1.0 - alpha,
        estimate,
        variance,
        lower: estimate - half,
        upper: estimate + half,
    })
}
