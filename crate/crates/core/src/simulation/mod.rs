//! Monte Carlo harness: superpopulations, Phase-I resampling, paired
//! adaptive and baseline replications, and metric aggregation.

mod metrics;
mod superpop;
mod synthetic;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{
    fit_components, ptd_combine, EstimationError, SolverOptions, TuningMatrix, TuningMode, WeightedDesign,
};
use crate::inference::{clamped_interval, covariance_components, mpd_covariance};
use crate::rng::{Domain, StreamKey, WaveStreams};
use crate::sampling::{ObservedStudy, SamplingError, StudyDesign, UnitRecord};
use crate::strategies::{
    build_wave_rule, LabelRule, PhaseOneFit, StrategyConfig, StrategyError, StrategyKind, WaveContext,
};

pub use metrics::{aggregate_metrics, arm_metrics, moments, ArmMetrics, StudyMetrics};
pub use superpop::{load_superpopulation, oracle_estimand, PopulationTable, Schema, Superpopulation};
pub use synthetic::{generate_rows, synthetic_table, OutcomeForm, SyntheticRow, SYNTHETIC_COLUMNS};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("row {row}: {message}")]
    Table { row: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unpaired results: {0}")]
    Pairing(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Which sampling arm a replication belongs to. Both arms of a replication
/// share the Phase-I sample but draw independent wave uniforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Adaptive,
    Baseline,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Adaptive => "adaptive",
            Arm::Baseline => "baseline",
        }
    }

    fn stream(self) -> u32 {
        match self {
            Arm::Adaptive => 0,
            Arm::Baseline => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicationStatus {
    Ok,
    /// The replication aborted; the string is the error message.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replication: u64,
    pub arm: Arm,
    pub status: ReplicationStatus,
    /// Phase-I size.
    pub n: usize,
    pub n_labelled: usize,
    /// Waves whose adaptive rule fell back to uniform sampling.
    pub fallback_waves: Vec<usize>,
    pub theta: Vec<f64>,
    /// Diagonal of `Σ̂^MPD` under the configured tuning (after clamping).
    pub variance: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub covered: Vec<bool>,
    /// Diagonal of `Σ̂^MPD` under the optimal, identity and zero tuning.
    pub variance_optimal: Vec<f64>,
    pub variance_identity: Vec<f64>,
    pub variance_zero: Vec<f64>,
    /// Coordinates whose variance was negative and clamped.
    pub clamped: Vec<usize>,
    /// `Σ̂^MPD` had a negative eigenvalue.
    pub not_psd: bool,
}

impl ReplicationResult {
    pub fn is_ok(&self) -> bool {
        self.status == ReplicationStatus::Ok
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    fn failed(
        replication: u64,
        arm: Arm,
        n: usize,
        n_labelled: usize,
        fallback_waves: Vec<usize>,
        reason: String,
    ) -> Self {
        Self {
            replication,
            arm,
            status: ReplicationStatus::Failed(reason),
            n,
            n_labelled,
            fallback_waves,
            theta: Vec::new(),
            variance: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            covered: Vec::new(),
            variance_optimal: Vec::new(),
            variance_identity: Vec::new(),
            variance_zero: Vec::new(),
            clamped: Vec::new(),
            not_psd: false,
        }
    }
}

/// Tuning and interval settings shared by both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSettings {
    pub tuning: TuningMode,
    pub ridge: Option<f64>,
    pub alpha: f64,
    pub solver: SolverOptions,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self { tuning: TuningMode::Optimal, ridge: None, alpha: 0.10, solver: SolverOptions::default() }
    }
}

/// A full Monte Carlo study. The adaptive arm uses `design` and `strategy`;
/// the baseline arm, when enabled, labels uniformly in a single wave with
/// the same total budget.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub design: StudyDesign,
    pub strategy: StrategyConfig,
    pub estimation: EstimationSettings,
    pub replications: usize,
    pub baseline: bool,
    /// Worker threads; `None` uses all available cores.
    pub threads: Option<usize>,
}

impl StudySpec {
    /// Single-wave uniform design with the adaptive arm's total budget.
    pub fn baseline_design(&self) -> Result<StudyDesign, SimulationError> {
        Ok(StudyDesign::new(self.design.n, vec![self.design.total_budget()], self.design.master_seed)?)
    }

    pub fn validate(&self, superpop: &Superpopulation) -> Result<(), SimulationError> {
        if self.replications == 0 {
            return Err(SimulationError::Configuration("replications must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(SimulationError::Configuration("parallelism must be at least 1".into()));
        }
        self.design.validate()?;
        let cheap_dim = superpop.cheap.first().map_or(0, Vec::len);
        self.strategy.validate(cheap_dim)?;
        if self.strategy.target >= superpop.loss.dim() {
            return Err(SimulationError::Configuration(format!(
                "target coordinate {} >= parameter dimension {}",
                self.strategy.target,
                superpop.loss.dim()
            )));
        }
        if !(self.estimation.alpha > 0.0 && self.estimation.alpha < 1.0) {
            return Err(SimulationError::Configuration(format!("alpha {} not in (0, 1)", self.estimation.alpha)));
        }
        if self.baseline {
            self.baseline_design()?;
        }
        Ok(())
    }
}

/// Per-arm results ordered by replication index.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub adaptive: Vec<ReplicationResult>,
    pub baseline: Option<Vec<ReplicationResult>>,
}

impl StudyOutcome {
    pub fn metrics(&self, superpop: &Superpopulation, target: usize) -> Result<StudyMetrics, SimulationError> {
        aggregate_metrics(&self.adaptive, self.baseline.as_deref(), superpop.oracle_theta.as_slice(), target)
    }
}

/// Draws `n` superpopulation rows with replacement from the replication's
/// Phase-I stream and returns them as unlabelled units with ids `0..n`.
pub fn phase_one_sample(
    superpop: &Superpopulation,
    n: usize,
    key: StreamKey,
) -> Result<Vec<UnitRecord>, SamplingError> {
    let mut rng = key.rng(Domain::PhaseOne, 0);
    let size = superpop.len();
    (0..n)
        .map(|id| {
            let r = rng.random_range(0..size);
            UnitRecord::new(id, superpop.cheap[r].clone(), superpop.expensive[r].clone())
        })
        .collect()
}

/// Runs the labelling waves of one arm on a fixed Phase-I sample.
/// Returns the finished study and the waves that fell back to uniform.
pub fn run_waves(
    superpop: &Superpopulation,
    design: &StudyDesign,
    strategy: &StrategyConfig,
    units: Vec<UnitRecord>,
    streams: &WaveStreams,
    solver: &SolverOptions,
) -> Result<(ObservedStudy, Vec<usize>), SimulationError> {
    let mut study = ObservedStudy::new(design.clone(), superpop.n_common(), units)?;
    let phase_one = match strategy.kind {
        StrategyKind::Uniform => None,
        _ if design.waves() == 1 => None,
        _ => {
            let proxies: Vec<Vec<f64>> = study.units().iter().map(|u| u.cheap().to_vec()).collect();
            Some(PhaseOneFit::compute(&superpop.loss, &proxies, solver)?)
        }
    };
    let ctx = WaveContext { loss: &superpop.loss, phase_one: phase_one.as_ref(), solver: *solver };
    let mut prior: Option<LabelRule> = None;
    let mut fallbacks = Vec::new();
    for k in 1..=design.waves() {
        let wave = build_wave_rule(strategy, &study, k, &ctx, prior.as_ref())?;
        if let Some(reason) = &wave.fallback {
            log::debug!("wave {k} fell back to uniform: {reason}");
            fallbacks.push(k);
        }
        study.run_wave(k, &wave.rule, streams)?;
        prior = Some(wave.rule);
    }
    study.finalize_weights()?;
    Ok((study, fallbacks))
}

/// One replication of one arm: resample Phase I, run the waves, estimate,
/// and score the intervals against the superpopulation estimand. Failures
/// are recorded in the result rather than returned.
pub fn run_replication(
    superpop: &Superpopulation,
    design: &StudyDesign,
    strategy: &StrategyConfig,
    settings: &EstimationSettings,
    replication: u64,
    arm: Arm,
) -> ReplicationResult {
    let key = StreamKey::new(design.master_seed, replication);
    let units = match phase_one_sample(superpop, design.n, key) {
        Ok(units) => units,
        Err(e) => return ReplicationResult::failed(replication, arm, design.n, 0, Vec::new(), e.to_string()),
    };
    let streams = WaveStreams::new(key, arm.stream());
    let (study, fallbacks) = match run_waves(superpop, design, strategy, units, &streams, &settings.solver) {
        Ok(done) => done,
        Err(e) => return ReplicationResult::failed(replication, arm, design.n, 0, Vec::new(), e.to_string()),
    };
    let n_labelled = study.labelled_count();
    match score(superpop, &study, settings) {
        Ok(mut result) => {
            result.replication = replication;
            result.arm = arm;
            result.n_labelled = n_labelled;
            result.fallback_waves = fallbacks;
            result
        }
        Err(e) => ReplicationResult::failed(replication, arm, design.n, n_labelled, fallbacks, e.to_string()),
    }
}

fn score(
    superpop: &Superpopulation,
    study: &ObservedStudy,
    settings: &EstimationSettings,
) -> crate::Result<ReplicationResult> {
    let loss = &superpop.loss;
    let design = WeightedDesign::from_study(study)?;
    let components = fit_components(loss, &design, &settings.solver)?;
    let cov = covariance_components(loss, &design, &components)?;
    let d = loss.dim();
    let diag = |tuning: &TuningMatrix| -> crate::Result<Vec<f64>> {
        let sigma = mpd_covariance(&cov, tuning)?.sigma;
        Ok((0..d).map(|j| sigma[(j, j)]).collect())
    };
    let variance_optimal = diag(&TuningMatrix::resolve(&TuningMode::Optimal, &cov, settings.ridge)?)?;
    let variance_identity = diag(&TuningMatrix::identity(d))?;
    let variance_zero = diag(&TuningMatrix::zero(d))?;

    let tuning = TuningMatrix::resolve(&settings.tuning, &cov, settings.ridge)?;
    let theta = ptd_combine(&components, &tuning.omega);
    let covariance = mpd_covariance(&cov, &tuning)?;
    let mut result = ReplicationResult::failed(0, Arm::Adaptive, design.n, 0, Vec::new(), String::new());
    result.status = ReplicationStatus::Ok;
    result.not_psd = !covariance.is_psd();
    for j in 0..d {
        let (ci, clamped) = clamped_interval(theta[j], &covariance.sigma, design.n, settings.alpha, j)?;
        if clamped {
            result.clamped.push(j);
        }
        result.covered.push(ci.contains(superpop.oracle_theta[j]));
        result.variance.push(ci.variance);
        result.lower.push(ci.lower);
        result.upper.push(ci.upper);
    }
    result.theta = theta.iter().copied().collect();
    result.variance_optimal = variance_optimal;
    result.variance_identity = variance_identity;
    result.variance_zero = variance_zero;
    Ok(result)
}

/// Runs every replication of the study, in parallel, and returns results
/// in replication order. Results do not depend on the thread count.
pub fn run_study(superpop: &Superpopulation, spec: &StudySpec) -> Result<StudyOutcome, SimulationError> {
    spec.validate(superpop)?;
    let baseline_design = if spec.baseline { Some(spec.baseline_design()?) } else { None };
    let uniform = StrategyConfig::uniform(spec.strategy.target);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = spec.threads {
        builder = builder.num_threads(threads);
    }
    let pool = builder.build().map_err(|e| SimulationError::Configuration(format!("thread pool: {e}")))?;
    let pairs: Vec<(ReplicationResult, Option<ReplicationResult>)> = pool.install(|| {
        (0..spec.replications as u64)
            .into_par_iter()
            .map(|rep| {
                let adaptive =
                    run_replication(superpop, &spec.design, &spec.strategy, &spec.estimation, rep, Arm::Adaptive);
                let baseline = baseline_design
                    .as_ref()
                    .map(|d| run_replication(superpop, d, &uniform, &spec.estimation, rep, Arm::Baseline));
                (adaptive, baseline)
            })
            .collect()
    });
    let (adaptive, baseline): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let baseline = spec.baseline.then(|| baseline.into_iter().flatten().collect());
    Ok(StudyOutcome { adaptive, baseline })
}

/// Interior empirical quantile cut points splitting `values` into `bins`
/// groups of near-equal size. Duplicate cut points are dropped.
pub fn quantile_breakpoints(values: &[f64], bins: usize) -> Result<Vec<f64>, SimulationError> {
    if bins == 0 || values.is_empty() {
        return Err(SimulationError::Configuration("quantile strata need values and at least one bin".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = (1..bins).map(|q| sorted[(q * sorted.len()).div_ceil(bins) - 1]).collect();
    cuts.dedup();
    Ok(cuts)
}
