//! Labelling rules: uniform exploration and the greedy square-root rule with
//! kNN or stratified estimates of the conditional influence variance.

mod knn;
mod strata;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use knn::KnnRegressor;
pub use strata::{stratified_rho, StrataSpec, StratifiedRho};

use crate::estimators::{solve_weighted_m, EstimationError, SolverOptions};
use crate::linalg::{self, LinalgError};
use crate::losses::{LossError, LossModel};
use crate::sampling::{ObservedStudy, SamplingError};

/// Floor applied to `ϱ̂` before taking square roots.
pub const RHO_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("budget {n_targ} infeasible for {units} units with overlap bound {b}")]
    BudgetInfeasible { n_targ: f64, units: usize, b: f64 },
    #[error("kNN training set is empty")]
    EmptyTraining,
    #[error("stratum degeneracy: {0}")]
    StratumDegenerate(String),
    #[error("strategy configuration error: {0}")]
    Configuration(String),
    #[error("interim Hessian is singular: {0}")]
    SingularHessian(LinalgError),
    #[error("intensities must be finite and positive")]
    InvalidIntensity,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Estimate of `ϱ_j(x̃)`, the conditional mean of the squared influence gap.
pub trait RhoModel: Send + Sync + fmt::Debug {
    fn rho(&self, cheap: &[f64]) -> f64;
}

/// How trimmed probabilities are pulled back onto the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rebalance {
    None,
    Down(f64),
    Up(f64),
}

/// Parameters that turn an intensity into a final probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimParams {
    pub scale: f64,
    pub b: f64,
    pub rebalance: Rebalance,
}

impl TrimParams {
    pub fn apply(&self, intensity: f64) -> f64 {
        let (lo, hi) = (self.b, 1.0 - self.b);
        let f = (self.scale * intensity).clamp(lo, hi);
        let p = match self.rebalance {
            Rebalance::None => f,
            Rebalance::Down(alpha) => lo + alpha * (f - lo),
            Rebalance::Up(alpha) => hi - alpha * (hi - f),
        };
        p.clamp(lo, hi)
    }
}

pub type ProbabilityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One wave's contribution to a rule.
#[derive(Clone)]
pub enum RuleStage {
    Constant(f64),
    /// Arbitrary fixed map from cheap vector to probability.
    Fixed(ProbabilityFn),
    /// `trim(sqrt(max(ϱ̂, floor)) / sqrt(survival))`.
    Greedy {
        rho: Arc<dyn RhoModel>,
        trim: TrimParams,
    },
}

impl RuleStage {
    /// Probability for a unit whose earlier waves left it unlabelled with
    /// probability `survival`.
    pub fn evaluate(&self, cheap: &[f64], survival: f64) -> f64 {
        match self {
            RuleStage::Constant(p) => *p,
            RuleStage::Fixed(f) => f(cheap),
            RuleStage::Greedy { rho, trim } => trim.apply(greedy_intensity(rho.rho(cheap), survival)),
        }
    }
}

impl fmt::Debug for RuleStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleStage::Constant(p) => write!(f, "Constant({p})"),
            RuleStage::Fixed(_) => write!(f, "Fixed(..)"),
            RuleStage::Greedy { rho, trim } => f.debug_struct("Greedy").field("rho", rho).field("trim", trim).finish(),
        }
    }
}

/// A labelling rule for one wave, carrying the stages of earlier waves so
/// that survival-dependent stages can be evaluated from the cheap vector
/// alone.
#[derive(Clone, Debug)]
pub struct LabelRule {
    stages: Vec<RuleStage>,
}

impl LabelRule {
    pub fn constant(p: f64) -> Self {
        Self { stages: vec![RuleStage::Constant(p)] }
    }

    pub fn fixed(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { stages: vec![RuleStage::Fixed(Arc::new(f))] }
    }

    /// The rule for the next wave: this rule's stages followed by `stage`.
    pub fn then(&self, stage: RuleStage) -> Self {
        let mut stages = self.stages.clone();
        stages.push(stage);
        Self { stages }
    }

    pub fn waves(&self) -> usize {
        self.stages.len()
    }

    pub fn last_stage(&self) -> &RuleStage {
        self.stages.last().expect("rules have at least one stage")
    }

    /// `π(x̃)` for the rule's own wave.
    pub fn probability(&self, cheap: &[f64]) -> f64 {
        let mut survival = 1.0;
        let mut p = 0.0;
        for stage in &self.stages {
            p = stage.evaluate(cheap, survival);
            survival *= 1.0 - p;
        }
        p
    }

    /// `π(x̃)` when the earlier-wave survival probability is already known.
    pub fn probability_given_survival(&self, cheap: &[f64], survival: f64) -> f64 {
        self.last_stage().evaluate(cheap, survival)
    }
}

/// Constant rule `n_targ / N`.
pub fn uniform_rule(n_targ: f64, n: usize, b: f64) -> Result<LabelRule, StrategyError> {
    let p = n_targ / n as f64;
    if !(p > 0.0 && p <= 1.0 - b) {
        return Err(StrategyError::BudgetInfeasible { n_targ, units: n, b });
    }
    Ok(LabelRule::constant(p.clamp(b, 1.0 - b)))
}

/// `sqrt(max(ϱ̂, floor)) · survival^(-1/2)`.
pub fn greedy_intensity(rho: f64, survival: f64) -> f64 {
    rho.max(RHO_FLOOR).sqrt() / survival.sqrt()
}

/// Normalises intensities to the budget, trims into `[b, 1-b]` and
/// rebalances so the probabilities again sum to `n_targ`.
pub fn enforce_budget_overlap(
    intensities: &[f64],
    n_targ: f64,
    b: f64,
) -> Result<(Vec<f64>, TrimParams), StrategyError> {
    let units = intensities.len();
    let size = units as f64;
    if units == 0 || !(b * size < n_targ && n_targ < (1.0 - b) * size) {
        return Err(StrategyError::BudgetInfeasible { n_targ, units, b });
    }
    if intensities.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(StrategyError::InvalidIntensity);
    }
    let total: f64 = intensities.iter().sum();
    let scale = n_targ / total;
    let plain = TrimParams { scale, b, rebalance: Rebalance::None };
    let n_trim: f64 = intensities.iter().map(|&v| plain.apply(v)).sum();
    let rebalance = if (n_trim - n_targ).abs() <= 1e-12 * n_targ {
        Rebalance::None
    } else if n_trim > n_targ {
        Rebalance::Down((n_targ - b * size) / (n_trim - b * size))
    } else {
        Rebalance::Up(((1.0 - b) * size - n_targ) / ((1.0 - b) * size - n_trim))
    };
    let params = TrimParams { scale, b, rebalance };
    Ok((intensities.iter().map(|&v| params.apply(v)).collect(), params))
}

/// `γ̂^I` and `Ĥ_γ` from the fully observed proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneFit {
    pub gamma_i: DVector<f64>,
    pub h_gamma: DMatrix<f64>,
    pub h_gamma_inv: DMatrix<f64>,
}

impl PhaseOneFit {
    pub fn compute(loss: &LossModel, proxies: &[Vec<f64>], opts: &SolverOptions) -> Result<Self, StrategyError> {
        let ones = vec![1.0; proxies.len()];
        let n = proxies.len() as f64;
        let fit = solve_weighted_m(loss, proxies, &ones, None, &opts.with_normalizer(n))?;
        let h_gamma = loss.weighted_hessian_sum(fit.theta.as_slice(), proxies, &ones)? / n;
        let h_gamma_inv = linalg::checked_inverse(&h_gamma).map_err(StrategyError::SingularHessian)?;
        Ok(Self { gamma_i: fit.theta, h_gamma, h_gamma_inv })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterimFit {
    pub theta: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// `(unit position, 𝒴_i)` for every labelled unit.
    pub psi: Vec<(usize, f64)>,
}

/// Interim fit on waves `1..k*-1` and the squared influence gaps
/// `𝒴_i = (e_jᵀ Ĥ^-1 l̇_θ̂(X_i) − e_jᵀ Ĥ_γ^-1 l̇_γ̂(X̃_i))²`.
pub fn interim_fit(
    loss: &LossModel,
    study: &ObservedStudy,
    k_star: usize,
    phase_one: &PhaseOneFit,
    target: usize,
    opts: &SolverOptions,
) -> Result<InterimFit, StrategyError> {
    let prior = k_star - 1;
    let d = loss.dim();
    if target >= d {
        return Err(StrategyError::Configuration(format!("target coordinate {target} >= dimension {d}")));
    }
    let mass: f64 = study.design().c[..prior].iter().sum();
    if !(mass > 0.0) {
        return Err(StrategyError::Configuration("earlier waves carry no mix weight".into()));
    }
    let partial = study.partial_weights(prior)?;
    let n = study.n() as f64;
    let mut positions = Vec::new();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for (i, unit) in study.units().iter().enumerate() {
        if unit.labelled_wave().is_some_and(|k| k <= prior) {
            positions.push(i);
            rows.push(study.full_features(i)?);
            weights.push(partial[i] / mass);
        }
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < d + 1 {
        return Err(EstimationError::InsufficientData { labelled: positive, required: d + 1 }.into());
    }
    let fit = solve_weighted_m(loss, &rows, &weights, None, &opts.with_normalizer(n))?;
    let hessian = loss.weighted_hessian_sum(fit.theta.as_slice(), &rows, &weights)? / n;
    let h_inv = linalg::checked_inverse(&hessian).map_err(StrategyError::SingularHessian)?;
    let a = h_inv.row(target).clone_owned();
    let g = phase_one.h_gamma_inv.row(target).clone_owned();
    let theta = fit.theta.as_slice();
    let gamma = phase_one.gamma_i.as_slice();
    let mut g1 = vec![0.0; d];
    let mut g3 = vec![0.0; d];
    let psi = positions
        .iter()
        .zip(&rows)
        .map(|(&i, x)| {
            loss.gradient_into(theta, x, &mut g1);
            loss.gradient_into(gamma, study.proxy_features(i), &mut g3);
            let left: f64 = a.iter().zip(&g1).map(|(r, v)| r * v).sum();
            let right: f64 = g.iter().zip(&g3).map(|(r, v)| r * v).sum();
            (i, (left - right).powi(2))
        })
        .collect();
    Ok(InterimFit { theta: fit.theta, hessian, psi })
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    Uniform,
    GreedyKnn { neighbors: usize, features: Option<Vec<usize>> },
    GreedyStratified { strata: StrataSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Coordinate `j` whose interval width is targeted.
    pub target: usize,
}

impl StrategyConfig {
    pub fn uniform(target: usize) -> Self {
        Self { kind: StrategyKind::Uniform, target }
    }

    pub fn knn(neighbors: usize, target: usize) -> Self {
        Self { kind: StrategyKind::GreedyKnn { neighbors, features: None }, target }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<(), StrategyError> {
        match &self.kind {
            StrategyKind::Uniform => Ok(()),
            StrategyKind::GreedyKnn { neighbors, features } => {
                if *neighbors == 0 {
                    return Err(StrategyError::Configuration("k_neighbors must be at least 1".into()));
                }
                match features {
                    Some(cols) if cols.is_empty() || cols.iter().any(|&c| c >= feature_dim) => {
                        Err(StrategyError::Configuration("kNN features must be non-empty valid cheap columns".into()))
                    }
                    _ => Ok(()),
                }
            }
            StrategyKind::GreedyStratified { strata } => strata.validate(feature_dim),
        }
    }
}

/// Shared inputs for building adaptive rules within one study.
#[derive(Debug, Clone, Copy)]
pub struct WaveContext<'a> {
    pub loss: &'a LossModel,
    pub phase_one: Option<&'a PhaseOneFit>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct WaveRule {
    pub rule: LabelRule,
    /// Set when the adaptive rule could not be fitted and a uniform rule on
    /// the remaining budget was used instead.
    pub fallback: Option<String>,
}

/// Rule for wave `k_star` given the history in `study` and the previous
/// wave's rule.
pub fn build_wave_rule(
    config: &StrategyConfig,
    study: &ObservedStudy,
    k_star: usize,
    ctx: &WaveContext<'_>,
    prior: Option<&LabelRule>,
) -> Result<WaveRule, StrategyError> {
    let design = study.design();
    let b = design.b_targ;
    let n_targ = design.wave_budgets[k_star - 1];
    if k_star == 1 {
        return Ok(WaveRule { rule: uniform_rule(n_targ, study.n(), b)?, fallback: None });
    }
    let prior = prior.ok_or_else(|| StrategyError::Configuration("adaptive waves need the previous rule".into()))?;
    let unlabelled = study.unlabelled_positions();
    let units = unlabelled.len();
    let size = units as f64;
    if !(b * size < n_targ && n_targ < (1.0 - b) * size) {
        return Err(StrategyError::BudgetInfeasible { n_targ, units, b });
    }
    let uniform =
        |reason: Option<String>| WaveRule { rule: prior.then(RuleStage::Constant(n_targ / size)), fallback: reason };
    if config.kind == StrategyKind::Uniform {
        return Ok(uniform(None));
    }
    match greedy_stage(config, study, k_star, ctx, &unlabelled, n_targ) {
        Ok(stage) => Ok(WaveRule { rule: prior.then(stage), fallback: None }),
        Err(err) => {
            log::debug!("wave {k_star}: adaptive rule failed ({err}); using uniform");
            Ok(uniform(Some(err.to_string())))
        }
    }
}

fn greedy_stage(
    config: &StrategyConfig,
    study: &ObservedStudy,
    k_star: usize,
    ctx: &WaveContext<'_>,
    unlabelled: &[usize],
    n_targ: f64,
) -> Result<RuleStage, StrategyError> {
    let phase_one =
        ctx.phase_one.ok_or_else(|| StrategyError::Configuration("greedy rules need the Phase-I fit".into()))?;
    let interim = interim_fit(ctx.loss, study, k_star, phase_one, config.target, &ctx.solver)?;
    let rho: Arc<dyn RhoModel> = match &config.kind {
        StrategyKind::GreedyKnn { neighbors, features } => {
            let train: Vec<Vec<f64>> = interim.psi.iter().map(|&(i, _)| study.proxy_features(i).to_vec()).collect();
            let ids: Vec<usize> = interim.psi.iter().map(|&(i, _)| study.units()[i].id()).collect();
            let targets: Vec<f64> = interim.psi.iter().map(|&(_, y)| y).collect();
            Arc::new(KnnRegressor::fit(&train, &ids, &targets, *neighbors, features.clone())?)
        }
        StrategyKind::GreedyStratified { strata } => {
            let cheap: Vec<&[f64]> = study.units().iter().map(|u| u.cheap()).collect();
            let partial = study.partial_weights(k_star - 1)?;
            let mass: f64 = study.design().c[..k_star - 1].iter().sum();
            Arc::new(stratified_rho(strata, &cheap, &partial, mass, &interim.psi)?)
        }
        StrategyKind::Uniform => unreachable!("handled by the caller"),
    };
    let intensities: Vec<f64> = unlabelled
        .iter()
        .map(|&i| greedy_intensity(rho.rho(study.proxy_features(i)), study.survival(i, k_star)))
        .collect();
    let (_, trim) = enforce_budget_overlap(&intensities, n_targ, study.design().b_targ)?;
    Ok(RuleStage::Greedy { rho, trim })
}
