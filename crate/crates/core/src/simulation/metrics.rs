//! Monte Carlo summaries of replication results.

use super::{ReplicationResult, SimulationError};

/// Summary of one arm for the target coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmMetrics {
    pub replications: usize,
    pub failed: usize,
    pub fallbacks: usize,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_labelled: f64,
    /// Mean of `Σ̂_jj / N`.
    pub mean_estimated_variance: f64,
    /// Sample variance of `θ̂_j` across replications.
    pub empirical_variance: f64,
    /// `mean_estimated_variance / empirical_variance`.
    pub variance_ratio: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyMetrics {
    pub target: usize,
    pub adaptive: ArmMetrics,
    pub baseline: Option<ArmMetrics>,
    /// Successful adaptive/baseline pairs used for the ESS ratios.
    pub pairs: usize,
    /// Mean of `(w_base / w_adapt)² · (n_base / n_adapt)`.
    pub ess_ratio: Option<f64>,
    /// Mean of `(w_base / w_adapt)² · (n_adapt / n_base)`.
    pub ess_ratio_literal: Option<f64>,
    /// Mean of `(w_base / w_adapt)²`.
    pub ess_ratio_unadjusted: Option<f64>,
}

/// Sample mean, unbiased variance, skewness and excess kurtosis (moment
/// estimators, standardised by the population second moment).
pub fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let central = |p: i32| values.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let m2 = central(2);
    let m3 = central(3);
    let m4 = central(4);
    let var = if values.len() > 1 { m2 * n / (n - 1.0) } else { 0.0 };
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    (mean, var, skew, kurt)
}

/// Metrics of one arm; failed replications are counted and skipped.
pub fn arm_metrics(results: &[ReplicationResult], oracle: f64, target: usize) -> ArmMetrics {
    let ok: Vec<&ReplicationResult> = results.iter().filter(|r| r.is_ok()).collect();
    let count = ok.len() as f64;
    let estimates: Vec<f64> = ok.iter().map(|r| r.theta[target]).collect();
    let (mean, empirical_variance, skewness, excess_kurtosis) =
        if ok.is_empty() { (f64::NAN, f64::NAN, f64::NAN, f64::NAN) } else { moments(&estimates) };
    let mse = estimates.iter().map(|t| (t - oracle).powi(2)).sum::<f64>() / count;
    let covered = ok.iter().filter(|r| r.covered[target]).count() as f64;
    let mean_estimated_variance = ok.iter().map(|r| r.variance[target] / r.n as f64).sum::<f64>() / count;
    ArmMetrics {
        replications: ok.len(),
        failed: results.len() - ok.len(),
        fallbacks: ok.iter().filter(|r| !r.fallback_waves.is_empty()).count(),
        rmse: mse.sqrt(),
        bias: mean - oracle,
        coverage: covered / count,
        mean_width: ok.iter().map(|r| r.width(target)).sum::<f64>() / count,
        mean_labelled: ok.iter().map(|r| r.n_labelled as f64).sum::<f64>() / count,
        mean_estimated_variance,
        empirical_variance,
        variance_ratio: mean_estimated_variance / empirical_variance,
        skewness,
        excess_kurtosis,
    }
}

/// Aggregates paired adaptive and baseline results for coordinate `target`.
pub fn aggregate_metrics(
    adaptive: &[ReplicationResult],
    baseline: Option<&[ReplicationResult]>,
    oracle_theta: &[f64],
    target: usize,
) -> Result<StudyMetrics, SimulationError> {
    if target >= oracle_theta.len() {
        return Err(SimulationError::Configuration(format!(
            "target coordinate {target} >= dimension {}",
            oracle_theta.len()
        )));
    }
    let oracle = oracle_theta[target];
    let adaptive_metrics = arm_metrics(adaptive, oracle, target);
    let Some(baseline) = baseline else {
        return Ok(StudyMetrics {
            target,
            adaptive: adaptive_metrics,
            baseline: None,
            pairs: 0,
            ess_ratio: None,
            ess_ratio_literal: None,
            ess_ratio_unadjusted: None,
        });
    };
    if baseline.len() != adaptive.len() {
        return Err(SimulationError::Pairing(format!(
            "{} adaptive results but {} baseline results",
            adaptive.len(),
            baseline.len()
        )));
    }
    let (mut adjusted, mut literal, mut unadjusted) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b) in adaptive.iter().zip(baseline) {
        if a.replication != b.replication {
            return Err(SimulationError::Pairing(format!(
                "replication {} paired with {}",
                a.replication, b.replication
            )));
        }
        if !(a.is_ok() && b.is_ok()) {
            continue;
        }
        let (wa, wb) = (a.width(target), b.width(target));
        if !(wa > 0.0 && wb > 0.0) || a.n_labelled == 0 || b.n_labelled == 0 {
            continue;
        }
        let ratio = (wb / wa).powi(2);
        let counts = b.n_labelled as f64 / a.n_labelled as f64;
        unadjusted.push(ratio);
        adjusted.push(ratio * counts);
        literal.push(ratio / counts);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(StudyMetrics {
        target,
        adaptive: adaptive_metrics,
        baseline: Some(arm_metrics(baseline, oracle, target)),
        pairs: adjusted.len(),
        ess_ratio: mean(&adjusted),
        ess_ratio_literal: mean(&literal),
        ess_ratio_unadjusted: mean(&unadjusted),
    })
}
