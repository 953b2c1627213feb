//! Weighted M-estimation, the three component fits and the predict-then-debias
//! combination.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::inference::{self, ConfidenceInterval, CovarianceComponents, InferenceError, MpdCovariance};
use crate::linalg::{self, LinalgError};
use crate::losses::{dot, sigmoid, LossError, LossKind, LossModel, WeightedSample};
use crate::sampling::{ObservedStudy, SamplingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("{labelled} labelled units with positive weight, need at least {required}")]
    InsufficientData { labelled: usize, required: usize },
    #[error("normal equations are rank deficient: {0}")]
    RankDeficient(LinalgError),
    #[error("solver did not converge in {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64, last: Vec<f64> },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Tolerance on the max-norm of the normalised weighted score.
    pub tol: f64,
    pub max_iter: usize,
    /// Divisor `N` of the weighted objective; the number of rows when unset.
    pub normalizer: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, normalizer: None }
    }
}

impl SolverOptions {
    pub fn with_normalizer(mut self, n: f64) -> Self {
        self.normalizer = Some(n);
        self
    }
}

/// A solved weighted M-estimation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFit {
    pub theta: DVector<f64>,
    pub iterations: usize,
    /// `||N^-1 Σ w_i ∇l_θ(x_i)||_∞` at the returned point.
    pub score_norm: f64,
}

/// `N^-1 Σ w_i ∇l_θ(x_i)`.
pub fn weighted_score(loss: &LossModel, theta: &[f64], rows: &[Vec<f64>], weights: &[f64], n: f64) -> DVector<f64> {
    let d = loss.dim();
    let mut total = vec![0.0; d];
    let mut g = vec![0.0; d];
    for (x, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        loss.gradient_into(theta, x, &mut g);
        for (t, gi) in total.iter_mut().zip(&g) {
            *t += w * gi;
        }
    }
    DVector::from_iterator(d, total.into_iter().map(|v| v / n))
}

fn weighted_objective(loss: &LossModel, theta: &[f64], rows: &[Vec<f64>], weights: &[f64]) -> f64 {
    rows.iter().zip(weights).filter(|(_, w)| **w != 0.0).map(|(x, w)| w * loss.value_unchecked(theta, x)).sum()
}

/// Minimises `N^-1 Σ w_i l_θ(x_i)`.
pub fn solve_weighted_m(
    loss: &LossModel,
    rows: &[Vec<f64>],
    weights: &[f64],
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<WeightedFit, EstimationError> {
    if rows.len() != weights.len() {
        return Err(EstimationError::InvalidWeights(format!("{} rows but {} weights", rows.len(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(EstimationError::InvalidWeights("weights must be finite and non-negative".into()));
    }
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(EstimationError::InvalidWeights("all weights are zero".into()));
    }
    for x in rows {
        if x.len() != loss.feature_dim() {
            return Err(LossError::DimensionMismatch {
                what: "feature vector",
                expected: loss.feature_dim(),
                got: x.len(),
            }
            .into());
        }
    }
    let n = opts.normalizer.unwrap_or(rows.len() as f64);
    match loss.kind() {
        LossKind::Mean => {
            let total: f64 = weights.iter().sum();
            let sum: f64 = rows.iter().zip(weights).map(|(x, w)| w * loss.response(x)).sum();
            finish(loss, vec![sum / total], 0, rows, weights, n)
        }
        LossKind::Quantile { tau } => {
            let sample = WeightedSample::new(rows.iter().map(|x| loss.response(x)).collect(), weights.to_vec())?;
            finish(loss, vec![sample.quantile(tau)], 0, rows, weights, n)
        }
        LossKind::LinearRegression => solve_least_squares(loss, rows, weights, n, opts),
        LossKind::LogisticRegression => solve_logistic(loss, rows, weights, init, n, opts),
    }
}

fn finish(
    loss: &LossModel,
    theta: Vec<f64>,
    iterations: usize,
    rows: &[Vec<f64>],
    weights: &[f64],
    n: f64,
) -> Result<WeightedFit, EstimationError> {
    let score_norm = weighted_score(loss, &theta, rows, weights, n).amax();
    Ok(WeightedFit { theta: DVector::from_vec(theta), iterations, score_norm })
}

fn solve_least_squares(
    loss: &LossModel,
    rows: &[Vec<f64>],
    weights: &[f64],
    n: f64,
    opts: &SolverOptions,
) -> Result<WeightedFit, EstimationError> {
    let d = loss.dim();
    let mut gram = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (x, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let z = loss.design_row(x);
        let y = loss.response(x);
        for a in 0..d {
            rhs[a] += w * z[a] * y;
            for b in 0..=a {
                gram[(a, b)] += w * z[a] * z[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let mut theta = linalg::pivoted_solve(&gram, &rhs).map_err(EstimationError::RankDeficient)?;
    // Iterative refinement against the exact score.
    let mut iterations = 1;
    for _ in 0..3 {
        let score = weighted_score(loss, theta.as_slice(), rows, weights, n);
        if score.amax() <= opts.tol * 1e-3 {
            break;
        }
        let step = linalg::pivoted_solve(&gram, &(score * n)).map_err(EstimationError::RankDeficient)?;
        theta -= step;
        iterations += 1;
    }
    finish(loss, theta.as_slice().to_vec(), iterations, rows, weights, n)
}

fn solve_logistic(
    loss: &LossModel,
    rows: &[Vec<f64>],
    weights: &[f64],
    init: Option<&[f64]>,
    n: f64,
    opts: &SolverOptions,
) -> Result<WeightedFit, EstimationError> {
    let d = loss.dim();
    let mut theta = init.map_or_else(|| vec![0.0; d], <[f64]>::to_vec);
    let mut objective = weighted_objective(loss, &theta, rows, weights);
    let mean_weight = weights.iter().sum::<f64>() / rows.len() as f64;
    for iteration in 0..=opts.max_iter {
        let score = weighted_score(loss, &theta, rows, weights, n);
        let score_norm = score.amax();
        if score_norm <= opts.tol {
            if separates(loss, &theta, rows, weights) {
                return Err(EstimationError::NonConvergence { iterations: iteration, score_norm, last: theta });
            }
            return Ok(WeightedFit { theta: DVector::from_vec(theta), iterations: iteration, score_norm });
        }
        let separated = theta.iter().any(|t| !t.is_finite() || t.abs() > 1e8) || objective <= 1e-12 * mean_weight;
        if iteration == opts.max_iter || separated {
            return Err(EstimationError::NonConvergence { iterations: iteration, score_norm, last: theta });
        }
        let hessian = loss.weighted_hessian_sum(&theta, rows, weights)? / n;
        let step = match linalg::pivoted_solve(&hessian, &score) {
            Ok(step) => step,
            Err(_) => return Err(EstimationError::NonConvergence { iterations: iteration, score_norm, last: theta }),
        };
        let mut scale = 1.0;
        loop {
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - scale * s).collect();
            let value = weighted_objective(loss, &candidate, rows, weights);
            if value <= objective || scale < 1e-10 {
                theta = candidate;
                objective = value;
                break;
            }
            scale *= 0.5;
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// True when every weighted point is fitted almost perfectly, which only
/// happens on (numerically) separated data where the minimiser is at infinity.
fn separates(loss: &LossModel, theta: &[f64], rows: &[Vec<f64>], weights: &[f64]) -> bool {
    rows.iter().zip(weights).filter(|(_, w)| **w > 0.0).all(|(x, _)| {
        let eta = dot(&loss.design_row(x), theta);
        (sigmoid(eta) - loss.response(x)).abs() < 1e-4
    })
}

/// The rows needed by the estimators, detached from the sampling record.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDesign {
    /// Phase-I size `N`.
    pub n: usize,
    /// `X_i` of labelled units.
    pub labelled_full: Vec<Vec<f64>>,
    /// `X̃_i` of the same labelled units.
    pub labelled_proxy: Vec<Vec<f64>>,
    /// `W_i` of the same labelled units.
    pub weights: Vec<f64>,
    /// `X̃_i` of every Phase-I unit.
    pub all_proxy: Vec<Vec<f64>>,
}

impl WeightedDesign {
    /// Collects labelled rows and their aggregated weights from a study whose
    /// weights have been finalised.
    pub fn from_study(study: &ObservedStudy) -> Result<Self, EstimationError> {
        let weights = study.weights().ok_or_else(|| SamplingError::Protocol("weights not finalised".into()))?;
        let mut design = WeightedDesign {
            n: study.n(),
            labelled_full: Vec::new(),
            labelled_proxy: Vec::new(),
            weights: Vec::new(),
            all_proxy: study.units().iter().map(|u| u.cheap().to_vec()).collect(),
        };
        for (i, unit) in study.units().iter().enumerate() {
            if unit.is_labelled() {
                design.labelled_full.push(study.full_features(i)?);
                design.labelled_proxy.push(design.all_proxy[i].clone());
                design.weights.push(weights.aggregated[i]);
            }
        }
        Ok(design)
    }

    pub fn labelled_count(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentEstimates {
    pub theta_ii: WeightedFit,
    pub gamma_ii: WeightedFit,
    pub gamma_i: WeightedFit,
}

/// `θ̂^II`, `γ̂^II` and `γ̂^I`.
pub fn fit_components(
    loss: &LossModel,
    design: &WeightedDesign,
    opts: &SolverOptions,
) -> Result<ComponentEstimates, EstimationError> {
    let required = loss.dim() + 1;
    let labelled = design.labelled_count();
    if labelled < required {
        return Err(EstimationError::InsufficientData { labelled, required });
    }
    let opts = opts.with_normalizer(design.n as f64);
    let theta_ii = solve_weighted_m(loss, &design.labelled_full, &design.weights, None, &opts)?;
    let gamma_ii = solve_weighted_m(loss, &design.labelled_proxy, &design.weights, None, &opts)?;
    let ones = vec![1.0; design.all_proxy.len()];
    let gamma_i = solve_weighted_m(loss, &design.all_proxy, &ones, None, &opts)?;
    Ok(ComponentEstimates { theta_ii, gamma_ii, gamma_i })
}

/// `Ω γ̂^I + θ̂^II − Ω γ̂^II`.
pub fn ptd_combine(components: &ComponentEstimates, omega: &DMatrix<f64>) -> DVector<f64> {
    &components.theta_ii.theta + omega * (&components.gamma_i.theta - &components.gamma_ii.theta)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TuningMode {
    Identity,
    Zero,
    Optimal,
    Constant(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningMatrix {
    pub omega: DMatrix<f64>,
    pub mode: TuningMode,
}

impl TuningMatrix {
    pub fn identity(d: usize) -> Self {
        Self { omega: DMatrix::identity(d, d), mode: TuningMode::Identity }
    }

    pub fn zero(d: usize) -> Self {
        Self { omega: DMatrix::zeros(d, d), mode: TuningMode::Zero }
    }

    pub fn constant(omega: DMatrix<f64>) -> Result<Self, InferenceError> {
        if omega.iter().any(|v| !v.is_finite()) || omega.nrows() != omega.ncols() {
            return Err(InferenceError::InvalidTuning("constant tuning matrix must be square and finite".into()));
        }
        Ok(Self { mode: TuningMode::Constant(omega.clone()), omega })
    }

    /// Resolves `mode` against the covariance components.
    pub fn resolve(mode: &TuningMode, cov: &CovarianceComponents, ridge: Option<f64>) -> Result<Self, InferenceError> {
        let d = cov.h_theta.nrows();
        match mode {
            TuningMode::Identity => Ok(Self::identity(d)),
            TuningMode::Zero => Ok(Self::zero(d)),
            TuningMode::Optimal => optimal_tuning(cov, ridge),
            TuningMode::Constant(m) => {
                if m.shape() != (d, d) {
                    return Err(InferenceError::InvalidTuning(format!(
                        "tuning matrix is {}x{}, parameter dimension is {d}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Self::constant(m.clone())
            }
        }
    }
}

/// Default ridge `max(1e-8 · tr(Σ̂_22 − Σ̂_33) / d, 1e-12)`.
pub fn default_ridge(cov: &CovarianceComponents) -> f64 {
    let diff = &cov.s22 - &cov.s33;
    (1e-8 * diff.trace() / diff.nrows() as f64).max(1e-12)
}

/// `Ĥ_θ^-1 (Σ̂_12 − Σ̂_13)(Σ̂_22 − Σ̂_33 + ridge·I)^-1 Ĥ_γ`.
pub fn optimal_tuning(cov: &CovarianceComponents, ridge: Option<f64>) -> Result<TuningMatrix, InferenceError> {
    let d = cov.h_theta.nrows();
    let ridge = ridge.unwrap_or_else(|| default_ridge(cov));
    let h_theta_inv = linalg::checked_inverse(&cov.h_theta).map_err(InferenceError::SingularHessian)?;
    let middle = &cov.s22 - &cov.s33 + DMatrix::identity(d, d) * ridge;
    let middle_inv = linalg::checked_inverse(&middle).map_err(InferenceError::SingularHessian)?;
    let omega = h_theta_inv * (&cov.s12 - &cov.s13) * middle_inv * &cov.h_gamma;
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::InvalidTuning("optimal tuning matrix is not finite".into()));
    }
    Ok(TuningMatrix { omega, mode: TuningMode::Optimal })
}

/// Everything produced by one estimation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub theta_mpd: DVector<f64>,
    pub components: ComponentEstimates,
    pub covariance_components: CovarianceComponents,
    pub tuning: TuningMatrix,
    pub covariance: MpdCovariance,
    pub intervals: Vec<ConfidenceInterval>,
    /// Coordinates whose variance estimate was negative and clamped to 0.
    pub clamped: Vec<usize>,
}

/// Runs component fits, tuning, the MPD estimate and its intervals.
pub fn estimate(
    loss: &LossModel,
    design: &WeightedDesign,
    mode: &TuningMode,
    ridge: Option<f64>,
    alpha: f64,
    opts: &SolverOptions,
) -> Result<EstimateReport, crate::Error> {
    let components = fit_components(loss, design, opts)?;
    let cov = inference::covariance_components(loss, design, &components)?;
    let tuning = TuningMatrix::resolve(mode, &cov, ridge)?;
    let theta_mpd = ptd_combine(&components, &tuning.omega);
    let covariance = inference::mpd_covariance(&cov, &tuning)?;
    let mut intervals = Vec::with_capacity(theta_mpd.len());
    let mut clamped = Vec::new();
    for j in 0..theta_mpd.len() {
        let (ci, was_clamped) = inference::clamped_interval(theta_mpd[j], &covariance.sigma, design.n, alpha, j)?;
        if was_clamped {
            clamped.push(j);
        }
        intervals.push(ci);
    }
    Ok(EstimateReport { theta_mpd, components, covariance_components: cov, tuning, covariance, intervals, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear() -> LossModel {
        LossModel::linear(0, vec![1], true, 2).unwrap()
    }

    fn logistic() -> LossModel {
        LossModel::logistic(0, vec![1], true, 2).unwrap()
    }

    fn rows(pairs: &[(f64, f64)]) -> Vec<Vec<f64>> {
        pairs.iter().map(|&(y, x)| vec![y, x]).collect()
    }

    #[test]
    fn linear_perfect_fit() {
        let data = rows(&[(0.0, 0.0), (2.0, 1.0), (4.0, 2.0), (-2.0, -1.0)]);
        let fit = solve_weighted_m(&linear(), &data, &[1.0; 4], None, &SolverOptions::default()).unwrap();
        assert!(fit.theta[0].abs() < 1e-10);
        assert!((fit.theta[1] - 2.0).abs() < 1e-10);
        assert!(fit.score_norm <= 1e-8);
    }

    #[test]
    fn integer_weight_equals_duplication() {
        let data = rows(&[(1.0, 0.3), (2.5, 1.1), (0.4, -0.7), (3.3, 2.0), (-1.0, -1.5)]);
        let mut weights = vec![1.0; 5];
        weights[2] = 2.0;
        let mut duplicated = data.clone();
        duplicated.push(data[2].clone());
        for loss in [linear(), LossModel::mean(0, 2).unwrap(), LossModel::quantile(0.3, 0, 2).unwrap()] {
            let a = solve_weighted_m(&loss, &data, &weights, None, &SolverOptions::default()).unwrap();
            let b = solve_weighted_m(&loss, &duplicated, &[1.0; 6], None, &SolverOptions::default()).unwrap();
            assert!((a.theta - b.theta).amax() < 1e-8);
        }
    }

    #[test]
    fn logistic_symmetric_data() {
        let base = [(1.0, 0.5), (0.0, 1.2), (1.0, 2.0), (0.0, -0.3), (1.0, 0.1)];
        // Reflecting x alone leaves the slope at zero.
        let mut pairs = base.to_vec();
        pairs.extend(base.iter().map(|&(y, x)| (y, -x)));
        let fit = solve_weighted_m(&logistic(), &rows(&pairs), &[1.0; 10], None, &SolverOptions::default()).unwrap();
        assert!(fit.theta[1].abs() < 1e-8);
        // Reflecting x and flipping y leaves the intercept at zero.
        let mut pairs = base.to_vec();
        pairs.extend(base.iter().map(|&(y, x)| (1.0 - y, -x)));
        let fit = solve_weighted_m(&logistic(), &rows(&pairs), &[1.0; 10], None, &SolverOptions::default()).unwrap();
        assert!(fit.theta[0].abs() < 1e-8);
    }

    #[test]
    fn logistic_separation_fails() {
        let data = rows(&[(0.0, -2.0), (0.0, -1.0), (1.0, 1.0), (1.0, 2.0)]);
        let err = solve_weighted_m(&logistic(), &data, &[1.0; 4], None, &SolverOptions::default());
        assert!(matches!(err, Err(EstimationError::NonConvergence { .. })));
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let data = rows(&[(1.0, 3.0), (2.0, 3.0), (0.5, 3.0)]);
        let err = solve_weighted_m(&linear(), &data, &[1.0; 3], None, &SolverOptions::default());
        assert!(matches!(err, Err(EstimationError::RankDeficient(_))));
    }

    #[test]
    fn quantile_unit_weights_match_order_statistic() {
        let data: Vec<Vec<f64>> = (1..=100).rev().map(|v| vec![v as f64]).collect();
        let loss = LossModel::quantile(0.75, 0, 1).unwrap();
        let fit = solve_weighted_m(&loss, &data, &[1.0; 100], None, &SolverOptions::default()).unwrap();
        assert_eq!(fit.theta[0], 75.0);
    }

    #[test]
    fn invalid_weights() {
        let data = rows(&[(1.0, 0.0)]);
        assert!(solve_weighted_m(&linear(), &data, &[0.0], None, &SolverOptions::default()).is_err());
        assert!(solve_weighted_m(&linear(), &data, &[-1.0], None, &SolverOptions::default()).is_err());
    }

    fn components(ii: f64, gii: f64, gi: f64) -> ComponentEstimates {
        let fit = |v: f64| WeightedFit { theta: DVector::from_vec(vec![v]), iterations: 0, score_norm: 0.0 };
        ComponentEstimates { theta_ii: fit(ii), gamma_ii: fit(gii), gamma_i: fit(gi) }
    }

    #[test]
    fn ptd_combination_examples() {
        let c = components(1.5, 0.7, 0.9);
        assert_eq!(ptd_combine(&c, &DMatrix::zeros(1, 1))[0], 1.5);
        assert!((ptd_combine(&c, &DMatrix::identity(1, 1))[0] - (0.9 + 1.5 - 0.7)).abs() < 1e-15);
        let same = components(1.5, 0.8, 0.8);
        assert_eq!(ptd_combine(&same, &DMatrix::from_element(1, 1, 3.7))[0], 1.5);
    }

    fn scalar_cov(h_theta: f64, s12: f64, s13: f64, s22: f64, s33: f64, h_gamma: f64) -> CovarianceComponents {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        CovarianceComponents {
            s11: m(1.0),
            s12: m(s12),
            s22: m(s22),
            s13: m(s13),
            s33: m(s33),
            h_theta: m(h_theta),
            h_gamma: m(h_gamma),
        }
    }

    #[test]
    fn optimal_tuning_scalar() {
        let cov = scalar_cov(2.0, 3.0, 1.0, 4.0, 2.0, 2.0);
        let omega = optimal_tuning(&cov, Some(0.0)).unwrap();
        assert!((omega.omega[(0, 0)] - 1.0).abs() < 1e-15);
        let zero = optimal_tuning(&scalar_cov(2.0, 3.0, 3.0, 4.0, 2.0, 2.0), Some(0.0)).unwrap();
        assert_eq!(zero.omega[(0, 0)], 0.0);
    }

    #[test]
    fn singular_hessian_rejected() {
        let cov = scalar_cov(0.0, 3.0, 1.0, 4.0, 2.0, 2.0);
        assert!(matches!(optimal_tuning(&cov, None), Err(InferenceError::SingularHessian(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weight_scaling_leaves_fit_unchanged(
            xs in prop::collection::vec(-3.0f64..3.0, 8),
            noise in prop::collection::vec(-1.0f64..1.0, 8),
            ws in prop::collection::vec(0.1f64..5.0, 8),
            scale in 0.01f64..100.0,
        ) {
            let data: Vec<Vec<f64>> = xs.iter().zip(&noise).map(|(x, e)| vec![1.0 + 0.5 * x + e, *x]).collect();
            let scaled: Vec<f64> = ws.iter().map(|w| w * scale).collect();
            for loss in [linear(), LossModel::mean(0, 2).unwrap(), LossModel::quantile(0.6, 0, 2).unwrap()] {
                let a = solve_weighted_m(&loss, &data, &ws, None, &SolverOptions::default());
                let b = solve_weighted_m(&loss, &data, &scaled, None, &SolverOptions::default());
                if let (Ok(a), Ok(b)) = (a, b) {
                    prop_assert!((a.theta - b.theta).amax() < 1e-8);
                }
            }
        }

        #[test]
        fn smooth_fits_satisfy_score_equation(
            xs in prop::collection::vec(-2.0f64..2.0, 30),
            us in prop::collection::vec(0.0f64..1.0, 30),
            ws in prop::collection::vec(0.1f64..4.0, 30),
        ) {
            let data: Vec<Vec<f64>> = xs.iter().zip(&us).map(|(x, u)| {
                let y = if *u < crate::losses::sigmoid(0.3 + x) { 1.0 } else { 0.0 };
                vec![y, *x]
            }).collect();
            for loss in [linear(), logistic()] {
                if let Ok(fit) = solve_weighted_m(&loss, &data, &ws, None, &SolverOptions::default()) {
                    prop_assert!(fit.score_norm <= 1e-8);
                }
            }
        }
    }
}
