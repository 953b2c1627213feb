//! Two-phase multiwave Bernoulli sampling and the multiwave
//! inverse-probability weights.
//!
//! Phase I observes the cheap vector `X̃ = (X^c, X̃^e)` of every unit. In each
//! Phase-II wave `k` a rule assigns every unit a probability `π^(k)(X̃_i)`, an
//! independent uniform `U_i^(k)` is drawn and the unit is selected when
//! `U_i^(k) ≤ π^(k)(X̃_i)`. The first selection reveals `X^e_i`; later
//! selections of the same unit are recorded but measure nothing new.
//!
//! The wave weight of unit `i` is
//!
//! ```text
//! W_i^(k) = Π_{j<k} (1 - I_i^(j)) / (1 - π^(j)(X̃_i)) · I_i^(k) / π^(k)(X̃_i)
//! ```
//!
//! and the aggregated weight is `W_i = Σ_k c_k W_i^(k)`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::rng::UniformSource;
use crate::strategies::LabelRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("wave {wave}: probability {value} for unit {unit} outside [{lower}, {upper}]")]
    OverlapViolation { wave: usize, unit: usize, value: f64, lower: f64, upper: f64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("wave {wave}: probability {value} for unit {unit} is not in (0, 1)")]
    DivisionSafety { wave: usize, unit: usize, value: f64 },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("expensive features of unit {unit} were never measured")]
    Unlabelled { unit: usize },
    #[error("unit {unit}: cheap features must be finite")]
    NonFinite { unit: usize },
}

/// One Phase-I unit.
///
/// The expensive components are stored for every unit (simulations know
/// them) but are only handed out through [`expensive`](Self::expensive) once
/// the unit has been labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    id: usize,
    cheap: Vec<f64>,
    expensive: Vec<f64>,
    labelled_wave: Option<usize>,
}

impl UnitRecord {
    pub fn new(id: usize, cheap: Vec<f64>, expensive: Vec<f64>) -> Result<Self, SamplingError> {
        if cheap.iter().any(|v| !v.is_finite()) {
            return Err(SamplingError::NonFinite { unit: id });
        }
        Ok(Self { id, cheap, expensive, labelled_wave: None })
    }

    /// A unit labelled before sampling started (used when replaying
    /// externally collected studies).
    pub fn with_label(mut self, wave: usize) -> Self {
        self.labelled_wave = Some(wave);
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn cheap(&self) -> &[f64] {
        &self.cheap
    }

    pub fn labelled_wave(&self) -> Option<usize> {
        self.labelled_wave
    }

    pub fn is_labelled(&self) -> bool {
        self.labelled_wave.is_some()
    }

    pub fn expensive(&self) -> Result<&[f64], SamplingError> {
        match self.labelled_wave {
            Some(_) => Ok(&self.expensive),
            None => Err(SamplingError::Unlabelled { unit: self.id }),
        }
    }

    /// Expensive components regardless of label state. Only ground-truth
    /// computations in simulations may call this.
    pub fn ground_truth_expensive(&self) -> &[f64] {
        &self.expensive
    }
}

/// The record of one unit in one wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveTrace {
    pub pi: f64,
    pub u: f64,
    pub indicator: bool,
}

/// All units' traces for one wave, indexed by unit position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaveColumn {
    pub pi: Vec<f64>,
    pub u: Vec<f64>,
    pub indicator: Vec<bool>,
}

impl WaveColumn {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn trace(&self, i: usize) -> WaveTrace {
        WaveTrace { pi: self.pi[i], u: self.u[i], indicator: self.indicator[i] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiwaveWeights {
    /// `N × K`, entry `(i, k-1)` is `W_i^(k)`.
    pub wave_weights: DMatrix<f64>,
    pub aggregated: Vec<f64>,
    pub c: Vec<f64>,
}

/// Phase-I size, wave budgets, wave mix and overlap bound.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDesign {
    pub n: usize,
    pub wave_budgets: Vec<f64>,
    pub c: Vec<f64>,
    pub b_targ: f64,
    pub master_seed: u64,
}

impl StudyDesign {
    /// Design with budget-proportional wave mix and the default overlap bound.
    pub fn new(n: usize, wave_budgets: Vec<f64>, master_seed: u64) -> Result<Self, SamplingError> {
        let total: f64 = wave_budgets.iter().sum();
        let c = wave_budgets.iter().map(|b| b / total).collect();
        let b_targ = default_overlap(n, &wave_budgets);
        let design = Self { n, wave_budgets, c, b_targ, master_seed };
        design.validate()?;
        Ok(design)
    }

    /// Explore wave of `explore` expected labels followed by `waves - 1`
    /// adaptive waves sharing the rest of `total` evenly.
    pub fn explore_exploit(
        n: usize,
        total: f64,
        explore: f64,
        waves: usize,
        master_seed: u64,
    ) -> Result<Self, SamplingError> {
        if waves == 0 {
            return Err(SamplingError::Configuration("at least one wave is required".into()));
        }
        let budgets = if waves == 1 {
            vec![total]
        } else {
            let rest = (total - explore) / (waves - 1) as f64;
            std::iter::once(explore).chain(std::iter::repeat_n(rest, waves - 1)).collect()
        };
        Self::new(n, budgets, master_seed)
    }

    pub fn with_mix(mut self, c: Vec<f64>) -> Result<Self, SamplingError> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_overlap(mut self, b_targ: f64) -> Result<Self, SamplingError> {
        self.b_targ = b_targ;
        self.validate()?;
        Ok(self)
    }

    pub fn waves(&self) -> usize {
        self.wave_budgets.len()
    }

    pub fn total_budget(&self) -> f64 {
        self.wave_budgets.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let cfg = |m: String| Err(SamplingError::Configuration(m));
        if self.waves() == 0 {
            return cfg("at least one wave is required".into());
        }
        if self.n == 0 {
            return cfg("Phase-I size must be positive".into());
        }
        if let Some(b) = self.wave_budgets.iter().find(|b| !(**b > 0.0)) {
            return cfg(format!("wave budget {b} must be positive"));
        }
        if !(self.b_targ > 0.0 && self.b_targ < 0.5) {
            return cfg(format!("overlap bound {} not in (0, 1/2)", self.b_targ));
        }
        for (k, b) in self.wave_budgets.iter().enumerate() {
            if self.b_targ >= b / self.n as f64 {
                return cfg(format!(
                    "overlap bound {} must be below n_targ/N = {} for wave {}",
                    self.b_targ,
                    b / self.n as f64,
                    k + 1
                ));
            }
        }
        validate_mix(&self.c, self.waves())
    }
}

/// `min_k n_targ^(k) / (100 N)` over the adaptive waves (all waves when K = 1).
pub fn default_overlap(n: usize, wave_budgets: &[f64]) -> f64 {
    let adaptive = if wave_budgets.len() > 1 { &wave_budgets[1..] } else { wave_budgets };
    adaptive.iter().cloned().fold(f64::INFINITY, f64::min) / (100.0 * n as f64)
}

fn validate_mix(c: &[f64], waves: usize) -> Result<(), SamplingError> {
    if c.len() != waves {
        return Err(SamplingError::Configuration(format!("wave mix has {} entries for {} waves", c.len(), waves)));
    }
    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(SamplingError::Configuration("wave mix entries must lie in [0, 1]".into()));
    }
    let sum: f64 = c.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SamplingError::Configuration(format!("wave mix sums to {sum}, not 1")));
    }
    Ok(())
}

/// Phase-I units plus everything recorded during Phase II.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedStudy {
    design: StudyDesign,
    n_common: usize,
    units: Vec<UnitRecord>,
    waves: Vec<WaveColumn>,
    weights: Option<MultiwaveWeights>,
}

impl ObservedStudy {
    /// `n_common` is the number of leading cheap components that are
    /// measured exactly (`X^c`); the rest of the cheap vector holds one proxy
    /// per expensive component, in the same order.
    pub fn new(design: StudyDesign, n_common: usize, units: Vec<UnitRecord>) -> Result<Self, SamplingError> {
        design.validate()?;
        if units.len() != design.n {
            return Err(SamplingError::Configuration(format!(
                "design expects {} units, got {}",
                design.n,
                units.len()
            )));
        }
        if let Some(u) = units.iter().find(|u| u.cheap.len() != n_common + u.expensive.len()) {
            return Err(SamplingError::Configuration(format!(
                "unit {} has {} cheap components, expected {} common plus {} proxies",
                u.id,
                u.cheap.len(),
                n_common,
                u.expensive.len()
            )));
        }
        Ok(Self { design, n_common, units, waves: Vec::new(), weights: None })
    }

    pub fn design(&self) -> &StudyDesign {
        &self.design
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n_common(&self) -> usize {
        self.n_common
    }

    pub fn waves(&self) -> &[WaveColumn] {
        &self.waves
    }

    pub fn completed_waves(&self) -> usize {
        self.waves.len()
    }

    pub fn trace(&self, i: usize, k: usize) -> WaveTrace {
        self.waves[k - 1].trace(i)
    }

    pub fn labelled_count(&self) -> usize {
        self.units.iter().filter(|u| u.is_labelled()).count()
    }

    /// Positions of units not labelled in any completed wave.
    pub fn unlabelled_positions(&self) -> Vec<usize> {
        (0..self.units.len()).filter(|&i| !self.units[i].is_labelled()).collect()
    }

    /// `Π_{j<k} (1 - π^(j)(X̃_i))` from the recorded probabilities.
    pub fn survival(&self, i: usize, k: usize) -> f64 {
        let mut s = 1.0;
        for column in &self.waves[..k - 1] {
            s *= 1.0 - column.pi[i];
        }
        s
    }

    /// Proxy feature vector `X̃_i = (X^c, X̃^e)`.
    pub fn proxy_features(&self, i: usize) -> &[f64] {
        &self.units[i].cheap
    }

    /// Full feature vector `X_i = (X^c, X^e)`; fails for unlabelled units.
    pub fn full_features(&self, i: usize) -> Result<Vec<f64>, SamplingError> {
        let unit = &self.units[i];
        let expensive = unit.expensive()?;
        Ok(assemble_full(&unit.cheap[..self.n_common], expensive))
    }

    /// Full feature vector from stored ground truth, for simulations.
    pub fn ground_truth_features(&self, i: usize) -> Vec<f64> {
        let unit = &self.units[i];
        assemble_full(&unit.cheap[..self.n_common], &unit.expensive)
    }

    /// Executes wave `k` (1-based) with `rule`.
    ///
    /// Units labelled in an earlier wave are recorded with probability
    /// `b_targ` and keep their label.
    pub fn run_wave(&mut self, k: usize, rule: &LabelRule, source: &dyn UniformSource) -> Result<(), SamplingError> {
        if k != self.waves.len() + 1 || k > self.design.waves() {
            return Err(SamplingError::Protocol(format!(
                "wave {k} requested after {} of {} waves",
                self.waves.len(),
                self.design.waves()
            )));
        }
        let b = self.design.b_targ;
        let (lower, upper) = (b, 1.0 - b);
        let n = self.units.len();
        let mut pi = Vec::with_capacity(n);
        for i in 0..n {
            let unit = &self.units[i];
            let p =
                if unit.is_labelled() { b } else { rule.probability_given_survival(&unit.cheap, self.survival(i, k)) };
            if !(p >= lower && p <= upper) {
                return Err(SamplingError::OverlapViolation { wave: k, unit: unit.id, value: p, lower, upper });
            }
            pi.push(p);
        }
        let ids: Vec<usize> = self.units.iter().map(|u| u.id).collect();
        let u = source.draws(k, &ids);
        let indicator: Vec<bool> = u.iter().zip(&pi).map(|(u, p)| u <= p).collect();
        for (unit, &hit) in self.units.iter_mut().zip(&indicator) {
            if hit && unit.labelled_wave.is_none() {
                unit.labelled_wave = Some(k);
            }
        }
        self.waves.push(WaveColumn { pi, u, indicator });
        self.weights = None;
        Ok(())
    }

    /// Computes and caches the multiwave weights once all waves are done.
    pub fn finalize_weights(&mut self) -> Result<&MultiwaveWeights, SamplingError> {
        if self.waves.len() != self.design.waves() {
            return Err(SamplingError::Protocol(format!(
                "weights need {} waves, {} completed",
                self.design.waves(),
                self.waves.len()
            )));
        }
        let wave_weights = compute_wave_weights(&self.waves, self.design.waves())?;
        let aggregated = aggregate_weights(&wave_weights, &self.design.c)?;
        self.weights = Some(MultiwaveWeights { wave_weights, aggregated, c: self.design.c.clone() });
        Ok(self.weights.as_ref().expect("just set"))
    }

    pub fn weights(&self) -> Option<&MultiwaveWeights> {
        self.weights.as_ref()
    }

    /// Partial-wave weights `Σ_{k<k*} c_k W_i^(k)` over completed waves.
    pub fn partial_weights(&self, through_wave: usize) -> Result<Vec<f64>, SamplingError> {
        if through_wave > self.waves.len() {
            return Err(SamplingError::Protocol(format!(
                "only {} waves completed, asked for {through_wave}",
                self.waves.len()
            )));
        }
        let ww = compute_wave_weights(&self.waves[..through_wave], through_wave)?;
        Ok((0..self.units.len()).map(|i| (0..through_wave).map(|k| self.design.c[k] * ww[(i, k)]).sum()).collect())
    }

    /// Reorders units and their traces by `perm` (new position `p` holds old
    /// position `perm[p]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let units = perm.iter().map(|&i| self.units[i].clone()).collect();
        let waves = self
            .waves
            .iter()
            .map(|c| WaveColumn {
                pi: perm.iter().map(|&i| c.pi[i]).collect(),
                u: perm.iter().map(|&i| c.u[i]).collect(),
                indicator: perm.iter().map(|&i| c.indicator[i]).collect(),
            })
            .collect();
        Self { design: self.design.clone(), n_common: self.n_common, units, waves, weights: None }
    }
}

fn assemble_full(common: &[f64], expensive: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(common.len() + expensive.len());
    x.extend_from_slice(common);
    x.extend_from_slice(expensive);
    x
}

/// Wave weights of a single unit from its per-wave probabilities and
/// selection indicators.
pub fn unit_wave_weights(pi: &[f64], indicator: &[bool], out: &mut [f64]) {
    let mut carry = 1.0;
    for k in 0..pi.len() {
        let hit = if indicator[k] { 1.0 } else { 0.0 };
        out[k] = carry * hit / pi[k];
        carry *= (1.0 - hit) / (1.0 - pi[k]);
    }
}

/// `N × K` matrix of wave weights `W_i^(k)`.
pub fn compute_wave_weights(waves: &[WaveColumn], k: usize) -> Result<DMatrix<f64>, SamplingError> {
    if waves.len() != k {
        return Err(SamplingError::Protocol(format!("expected {k} waves of traces, got {}", waves.len())));
    }
    let n = waves.first().map_or(0, WaveColumn::len);
    if waves.iter().any(|c| c.len() != n) {
        return Err(SamplingError::Protocol("wave traces have different lengths".into()));
    }
    for (w, column) in waves.iter().enumerate() {
        if let Some(i) = column.pi.iter().position(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(SamplingError::DivisionSafety { wave: w + 1, unit: i, value: column.pi[i] });
        }
    }
    let mut out = DMatrix::zeros(n, k);
    let mut pi = vec![0.0; k];
    let mut ind = vec![false; k];
    let mut row = vec![0.0; k];
    for i in 0..n {
        for (w, column) in waves.iter().enumerate() {
            pi[w] = column.pi[i];
            ind[w] = column.indicator[i];
        }
        unit_wave_weights(&pi, &ind, &mut row);
        for w in 0..k {
            out[(i, w)] = row[w];
        }
    }
    Ok(out)
}

/// `W_i = Σ_k c_k W_i^(k)`.
pub fn aggregate_weights(wave_weights: &DMatrix<f64>, c: &[f64]) -> Result<Vec<f64>, SamplingError> {
    validate_mix(c, wave_weights.ncols())?;
    Ok((0..wave_weights.nrows())
        .map(|i| {
            let mut w = 0.0;
            for (k, ck) in c.iter().enumerate() {
                w += ck * wave_weights[(i, k)];
            }
            w
        })
        .collect())
}

/// Weights `W̄_i` that use fixed limiting rules in place of the learned ones
/// while reusing the recorded uniforms. With non-adaptive rules they equal
/// `W_i` exactly.
pub fn oracle_iid_weights(
    study: &ObservedStudy,
    fixed_rules: &[LabelRule],
    c: &[f64],
) -> Result<Vec<f64>, SamplingError> {
    let k = fixed_rules.len();
    if study.waves.len() != k {
        return Err(SamplingError::Protocol(format!("{k} fixed rules for {} recorded waves", study.waves.len())));
    }
    validate_mix(c, k)?;
    let mut pi = vec![0.0; k];
    let mut ind = vec![false; k];
    let mut row = vec![0.0; k];
    let mut out = Vec::with_capacity(study.n());
    for (i, unit) in study.units.iter().enumerate() {
        for (w, rule) in fixed_rules.iter().enumerate() {
            let p = rule.probability(&unit.cheap);
            if !(p > 0.0 && p < 1.0) {
                return Err(SamplingError::DivisionSafety { wave: w + 1, unit: unit.id, value: p });
            }
            pi[w] = p;
            ind[w] = study.waves[w].u[i] <= p;
        }
        unit_wave_weights(&pi, &ind, &mut row);
        let mut w = 0.0;
        for (ck, r) in c.iter().zip(&row) {
            w += ck * r;
        }
        out.push(w);
    }
    Ok(out)
}

/// `π^(k)(x̃) Π_{j<k} (1 - π^(j)(x̃))` for rules `1..=k`.
pub fn cumulative_selection_prob(rules: &[LabelRule], cheap: &[f64]) -> f64 {
    let Some((last, prior)) = rules.split_last() else {
        return 0.0;
    };
    let survival: f64 = prior.iter().map(|r| 1.0 - r.probability(cheap)).product();
    last.probability(cheap) * survival
}
