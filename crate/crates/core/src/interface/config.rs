//! TOML run configuration.
//!
//! A run file has top-level `seed`, `replications`, `parallel`, `alpha` and
//! `baseline` keys and the sections `[population]`, `[loss]`, `[design]`,
//! `[strategy]` and `[tuning]`. Only `[population]`, `[loss]` and
//! `[design]` are required:
//!
//! ```toml
//! seed = 7
//! replications = 200
//!
//! [population]
//! source = "synthetic"
//! rows = 1000000
//!
//! [loss]
//! kind = "linear"
//! response = "y"
//! covariates = ["z_cov", "z_trt"]
//! target = "z_trt"
//!
//! [design]
//! phase_one_size = 4000
//! label_budget = 400
//! waves = 6
//!
//! [strategy]
//! kind = "knn"
//! neighbors = 20
//! ```
//!
//! Unknown keys are rejected. A manifest written by `simulate` is a complete
//! run file with every default spelled out plus a `[manifest]` table.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::estimators::TuningMode;
use crate::losses::LossModel;
use crate::sampling::StudyDesign;
use crate::simulation::{
    quantile_breakpoints, synthetic_table, EstimationSettings, OutcomeForm, PopulationTable, Schema, StudySpec,
    Superpopulation,
};
use crate::strategies::{StrataSpec, StrategyConfig, StrategyKind};

use super::InterfaceError;

pub const DEFAULT_SUPERPOPULATION_ROWS: usize = 1_000_000;
pub const DEFAULT_NEIGHBORS: usize = 20;
pub const DEFAULT_EXPLORE_FRACTION: f64 = 0.25;
pub const DEFAULT_WAVES: usize = 2;
pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.10;

fn config_error(key: &str, message: impl Into<String>) -> InterfaceError {
    InterfaceError::Config { key: key.to_string(), message: message.into() }
}

/// Worker threads for the replication pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "ParallelRepr", into = "ParallelRepr")]
pub enum Parallelism {
    #[default]
    Auto,
    Threads(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParallelRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<ParallelRepr> for Parallelism {
    type Error = String;

    fn try_from(value: ParallelRepr) -> Result<Self, String> {
        match value {
            ParallelRepr::Count(0) => Err("parallel must be \"auto\" or a positive integer".into()),
            ParallelRepr::Count(n) => Ok(Parallelism::Threads(n)),
            ParallelRepr::Name(s) if s == "auto" => Ok(Parallelism::Auto),
            ParallelRepr::Name(s) => Err(format!("parallel must be \"auto\" or a positive integer, got \"{s}\"")),
        }
    }
}

impl From<Parallelism> for ParallelRepr {
    fn from(value: Parallelism) -> Self {
        match value {
            Parallelism::Auto => ParallelRepr::Name("auto".into()),
            Parallelism::Threads(n) => ParallelRepr::Count(n),
        }
    }
}

impl std::str::FromStr for Parallelism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Parallelism::Auto),
            _ => match s.parse::<usize>() {
                Ok(n) => Parallelism::try_from(ParallelRepr::Count(n)),
                Err(_) => Parallelism::try_from(ParallelRepr::Name(s.to_string())),
            },
        }
    }
}

impl Parallelism {
    pub fn threads(self) -> Option<usize> {
        match self {
            Parallelism::Auto => None,
            Parallelism::Threads(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeName {
    #[default]
    Literal,
    Trt,
}

impl From<OutcomeName> for OutcomeForm {
    fn from(value: OutcomeName) -> Self {
        match value {
            OutcomeName::Literal => OutcomeForm::Literal,
            OutcomeName::Trt => OutcomeForm::Treatment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default)]
    pub common: Vec<String>,
    pub expensive: Vec<String>,
    pub proxies: Vec<String>,
}

impl From<&SchemaConfig> for Schema {
    fn from(value: &SchemaConfig) -> Self {
        Schema { common: value.common.clone(), expensive: value.expensive.clone(), proxies: value.proxies.clone() }
    }
}

impl From<&Schema> for SchemaConfig {
    fn from(value: &Schema) -> Self {
        SchemaConfig {
            common: value.common.clone(),
            expensive: value.expensive.clone(),
            proxies: value.proxies.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum PopulationConfig {
    /// The built-in synthetic superpopulation; `seed` defaults to the run seed.
    Synthetic {
        #[serde(default = "default_rows")]
        rows: usize,
        #[serde(default)]
        outcome: OutcomeName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// A complete CSV table. Relative paths are resolved against the
    /// configuration file's directory.
    Csv { path: PathBuf, schema: SchemaConfig },
}

fn default_rows() -> usize {
    DEFAULT_SUPERPOPULATION_ROWS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Mean,
    Quantile,
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossName,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Coordinate whose interval the adaptive rule targets and the summary
    /// reports. Defaults to the last coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

fn yes() -> bool {
    true
}

impl LossConfig {
    /// Names of the parameter coordinates, in order.
    pub fn coordinate_names(&self) -> Vec<String> {
        match self.kind {
            LossName::Mean | LossName::Quantile => vec![self.response.clone()],
            LossName::Linear | LossName::Logistic => {
                let mut names = Vec::new();
                if self.intercept {
                    names.push("intercept".to_string());
                }
                names.extend(self.covariates.iter().cloned());
                names
            }
        }
    }

    pub fn target_index(&self) -> Result<usize, InterfaceError> {
        let names = self.coordinate_names();
        match &self.target {
            None => Ok(names.len() - 1),
            Some(t) => names
                .iter()
                .position(|n| n == t)
                .ok_or_else(|| config_error("loss.target", format!("'{t}' is not one of {names:?}"))),
        }
    }

    /// Builds the loss over the schema's full feature layout.
    pub fn build(&self, schema: &Schema) -> Result<LossModel, InterfaceError> {
        let index = |key: &str, name: &str| {
            schema
                .feature_index(name)
                .map_err(|_| config_error(key, format!("'{name}' is not a common or expensive column")))
        };
        let response = index("loss.response", &self.response)?;
        let dim = schema.common.len() + schema.expensive.len();
        let covariates = self.covariates.iter().map(|c| index("loss.covariates", c)).collect::<Result<Vec<_>, _>>()?;
        let built = match self.kind {
            LossName::Mean => {
                self.no_covariates()?;
                LossModel::mean(response, dim)
            }
            LossName::Quantile => {
                self.no_covariates()?;
                let tau = self.tau.ok_or_else(|| config_error("loss.tau", "quantile loss needs tau"))?;
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(config_error("loss.tau", format!("{tau} not in (0, 1)")));
                }
                LossModel::quantile(tau, response, dim)
            }
            LossName::Linear | LossName::Logistic => {
                if covariates.is_empty() && !self.intercept {
                    return Err(config_error("loss.covariates", "regression needs covariates or an intercept"));
                }
                if self.kind == LossName::Linear {
                    LossModel::linear(response, covariates, self.intercept, dim)
                } else {
                    LossModel::logistic(response, covariates, self.intercept, dim)
                }
            }
        };
        if self.tau.is_some() && self.kind != LossName::Quantile {
            return Err(config_error("loss.tau", "tau only applies to the quantile loss"));
        }
        self.target_index()?;
        built.map_err(|e| config_error("loss", e.to_string()))
    }

    fn no_covariates(&self) -> Result<(), InterfaceError> {
        if self.covariates.is_empty() {
            Ok(())
        } else {
            Err(config_error("loss.covariates", "mean and quantile losses take no covariates"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub phase_one_size: usize,
    /// Total expected labels; split into an explore wave and equal
    /// adaptive waves. Mutually exclusive with `wave_budgets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waves: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave_budgets: Option<Vec<f64>>,
    /// Wave mix `c`; defaults to budget-proportional.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<f64>>,
    /// Overlap bound; defaults to `min_k n_targ^(k) / (100 N)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
}

impl DesignConfig {
    pub fn wave_budgets(&self) -> Result<Vec<f64>, InterfaceError> {
        match (&self.wave_budgets, self.label_budget) {
            (Some(_), Some(_)) => Err(config_error("design", "give either label_budget or wave_budgets, not both")),
            (None, None) => Err(config_error("design", "one of label_budget or wave_budgets is required")),
            (Some(budgets), None) => {
                if self.waves.is_some() || self.explore_fraction.is_some() {
                    return Err(config_error(
                        "design.wave_budgets",
                        "waves and explore_fraction only apply with label_budget",
                    ));
                }
                if budgets.is_empty() {
                    return Err(config_error("design.wave_budgets", "at least one wave is required"));
                }
                Ok(budgets.clone())
            }
            (None, Some(total)) => {
                let waves = self.waves.unwrap_or(DEFAULT_WAVES);
                if waves == 0 {
                    return Err(config_error("design.waves", "at least one wave is required"));
                }
                let fraction = self.explore_fraction.unwrap_or(DEFAULT_EXPLORE_FRACTION);
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(config_error("design.explore_fraction", format!("{fraction} not in (0, 1)")));
                }
                if !(total > 0.0 && total.is_finite()) {
                    return Err(config_error("design.label_budget", "must be positive"));
                }
                if waves == 1 {
                    return Ok(vec![total]);
                }
                let explore = fraction * total;
                let rest = (total - explore) / (waves - 1) as f64;
                Ok(std::iter::once(explore).chain(std::iter::repeat_n(rest, waves - 1)).collect())
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<StudyDesign, InterfaceError> {
        let err = |e: crate::sampling::SamplingError| config_error("design", e.to_string());
        let mut design = StudyDesign::new(self.phase_one_size, self.wave_budgets()?, seed).map_err(err)?;
        if let Some(mix) = &self.mix {
            design = design.with_mix(mix.clone()).map_err(|e| config_error("design.mix", e.to_string()))?;
        }
        if let Some(b) = self.overlap {
            design = design.with_overlap(b).map_err(|e| config_error("design.overlap", e.to_string()))?;
        }
        Ok(design)
    }
}

/// One stratification axis: a cheap column cut at explicit breakpoints or
/// at empirical quantiles of the superpopulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumAxis {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategySection {
    Uniform,
    Knn {
        #[serde(default = "default_neighbors")]
        neighbors: usize,
        /// Cheap columns used as kNN features; all by default.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<String>>,
    },
    Stratified {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        axes: Vec<StratumAxis>,
        /// Integer-valued cheap column holding stratum labels.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
}

fn default_neighbors() -> usize {
    DEFAULT_NEIGHBORS
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection::Knn { neighbors: DEFAULT_NEIGHBORS, features: None }
    }
}

impl StrategySection {
    fn validate(&self, schema: &Schema) -> Result<(), InterfaceError> {
        let cheap = |key: &str, name: &str| {
            schema.cheap_index(name).map_err(|_| config_error(key, format!("'{name}' is not a common or proxy column")))
        };
        match self {
            StrategySection::Uniform => Ok(()),
            StrategySection::Knn { neighbors, features } => {
                if *neighbors == 0 {
                    return Err(config_error("strategy.neighbors", "must be at least 1"));
                }
                if let Some(features) = features {
                    if features.is_empty() {
                        return Err(config_error("strategy.features", "must not be empty"));
                    }
                    for f in features {
                        cheap("strategy.features", f)?;
                    }
                }
                Ok(())
            }
            StrategySection::Stratified { axes, column } => {
                match (axes.is_empty(), column) {
                    (true, None) => return Err(config_error("strategy", "stratified needs axes or column")),
                    (false, Some(_)) => return Err(config_error("strategy", "give either axes or column, not both")),
                    _ => {}
                }
                if let Some(c) = column {
                    cheap("strategy.column", c)?;
                }
                for axis in axes {
                    cheap("strategy.axes.column", &axis.column)?;
                    match (&axis.breakpoints, axis.quantiles) {
                        (Some(b), None) => {
                            if b.windows(2).any(|w| !(w[0] < w[1])) || b.iter().any(|v| !v.is_finite()) {
                                return Err(config_error(
                                    "strategy.axes.breakpoints",
                                    "must be finite and strictly increasing",
                                ));
                            }
                        }
                        (None, Some(q)) if q >= 1 => {}
                        (None, Some(_)) => return Err(config_error("strategy.axes.quantiles", "must be at least 1")),
                        _ => {
                            return Err(config_error(
                                "strategy.axes",
                                format!("axis '{}' needs exactly one of breakpoints or quantiles", axis.column),
                            ))
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Resolves column names and quantile axes against the superpopulation.
    pub fn build(&self, superpop: &Superpopulation, target: usize) -> Result<StrategyConfig, InterfaceError> {
        let schema = &superpop.schema;
        let cheap = |name: &str| schema.cheap_index(name).map_err(InterfaceError::from);
        let kind = match self {
            StrategySection::Uniform => StrategyKind::Uniform,
            StrategySection::Knn { neighbors, features } => StrategyKind::GreedyKnn {
                neighbors: *neighbors,
                features: features
                    .as_ref()
                    .map(|f| f.iter().map(|n| cheap(n)).collect::<Result<Vec<_>, _>>())
                    .transpose()?,
            },
            StrategySection::Stratified { axes, column } => {
                let strata = match column {
                    Some(c) => StrataSpec::Column(cheap(c)?),
                    None => {
                        let mut resolved = Vec::with_capacity(axes.len());
                        for axis in axes {
                            let col = cheap(&axis.column)?;
                            let breaks = match (&axis.breakpoints, axis.quantiles) {
                                (Some(b), _) => b.clone(),
                                (None, Some(q)) => {
                                    let values: Vec<f64> = superpop.cheap.iter().map(|r| r[col]).collect();
                                    quantile_breakpoints(&values, q)?
                                }
                                (None, None) => unreachable!("validated"),
                            };
                            resolved.push((col, breaks));
                        }
                        StrataSpec::Breakpoints(resolved)
                    }
                };
                StrategyKind::GreedyStratified { strata }
            }
        };
        Ok(StrategyConfig { kind, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningName {
    #[default]
    Optimal,
    Identity,
    Zero,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default)]
    pub mode: TuningName,
    /// Row-major `d × d` matrix for `mode = "constant"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl TuningConfig {
    pub fn build(&self, d: usize) -> Result<TuningMode, InterfaceError> {
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(config_error("tuning.ridge", "must be finite and non-negative"));
            }
        }
        match (self.mode, &self.matrix) {
            (TuningName::Constant, Some(rows)) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(config_error("tuning.matrix", format!("must be {d} x {d}")));
                }
                Ok(TuningMode::Constant(DMatrix::from_fn(d, d, |i, j| rows[i][j])))
            }
            (TuningName::Constant, None) => Err(config_error("tuning.matrix", "constant tuning needs a matrix")),
            (_, Some(_)) => Err(config_error("tuning.matrix", "only used with mode = \"constant\"")),
            (TuningName::Optimal, None) => Ok(TuningMode::Optimal),
            (TuningName::Identity, None) => Ok(TuningMode::Identity),
            (TuningName::Zero, None) => Ok(TuningMode::Zero),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInfo {
    /// SHA-256 of the run file without this table.
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Not written to manifests: results do not depend on it.
    #[serde(default, skip_serializing)]
    pub parallel: Parallelism,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Run the paired single-wave uniform arm.
    #[serde(default = "yes")]
    pub baseline: bool,
    pub population: PopulationConfig,
    pub loss: LossConfig,
    pub design: DesignConfig,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Everything needed to run a study.
#[derive(Debug)]
pub struct ResolvedRun {
    pub superpop: Superpopulation,
    pub spec: StudySpec,
    pub coordinate_names: Vec<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, InterfaceError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| InterfaceError::Parse(e.to_string()))?;
        if let PopulationConfig::Csv { path, .. } = &mut config.population {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        if let Some(info) = &config.manifest {
            let expected = config.hash()?;
            if info.config_hash != expected {
                return Err(config_error(
                    "manifest.config_hash",
                    format!("does not match the file contents (expected {expected}); remove the [manifest] table after editing"),
                ));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn schema(&self) -> Schema {
        match &self.population {
            PopulationConfig::Synthetic { .. } => Schema::synthetic(),
            PopulationConfig::Csv { schema, .. } => schema.into(),
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<(), InterfaceError> {
        if self.replications == 0 {
            return Err(config_error("replications", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_error("alpha", format!("{} not in (0, 1)", self.alpha)));
        }
        match &self.population {
            PopulationConfig::Synthetic { rows, .. } => {
                if *rows < 2 {
                    return Err(config_error("population.rows", "must be at least 2"));
                }
            }
            PopulationConfig::Csv { path, .. } => {
                if !path.is_file() {
                    return Err(config_error("population.path", format!("{} does not exist", path.display())));
                }
            }
        }
        let schema = self.schema();
        schema.validate().map_err(|e| config_error("population.schema", e.to_string()))?;
        let loss = self.loss.build(&schema)?;
        self.design.build(self.seed)?;
        self.strategy.validate(&schema)?;
        self.tuning.build(loss.dim())?;
        Ok(())
    }

    /// The config with defaults written out and no manifest table.
    pub fn normalized(&self) -> Result<RunConfig, InterfaceError> {
        let mut out = self.clone();
        out.manifest = None;
        if let PopulationConfig::Synthetic { seed, .. } = &mut out.population {
            seed.get_or_insert(self.seed);
        }
        if out.loss.target.is_none() {
            let names = out.loss.coordinate_names();
            out.loss.target = Some(names[out.loss.target_index()?].clone());
        }
        if out.design.label_budget.is_some() {
            out.design.waves.get_or_insert(DEFAULT_WAVES);
            out.design.explore_fraction.get_or_insert(DEFAULT_EXPLORE_FRACTION);
        }
        Ok(out)
    }

    /// SHA-256 (hex) of the normalized config serialised as TOML.
    pub fn hash(&self) -> Result<String, InterfaceError> {
        let text = self.normalized()?.to_toml()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn to_toml(&self) -> Result<String, InterfaceError> {
        toml::to_string(self).map_err(|e| InterfaceError::Parse(e.to_string()))
    }

    /// Normalized config plus a `[manifest]` table.
    pub fn manifest(&self) -> Result<String, InterfaceError> {
        let mut out = self.normalized()?;
        out.manifest = Some(ManifestInfo { config_hash: self.hash()?, version: env!("CARGO_PKG_VERSION").to_string() });
        out.to_toml()
    }

    /// Loads the superpopulation and assembles the study.
    pub fn resolve(&self) -> Result<ResolvedRun, InterfaceError> {
        let schema = self.schema();
        let loss = self.loss.build(&schema)?;
        let table = match &self.population {
            PopulationConfig::Synthetic { rows, outcome, seed } => {
                synthetic_table(*rows, seed.unwrap_or(self.seed), (*outcome).into())
            }
            PopulationConfig::Csv { path, .. } => PopulationTable::read_csv(path)?,
        };
        let superpop = Superpopulation::new(&table, schema, loss)?;
        let d = superpop.loss.dim();
        let target = self.loss.target_index()?;
        let spec = StudySpec {
            design: self.design.build(self.seed)?,
            strategy: self.strategy.build(&superpop, target)?,
            estimation: EstimationSettings {
                tuning: self.tuning.build(d)?,
                ridge: self.tuning.ridge,
                alpha: self.alpha,
                ..EstimationSettings::default()
            },
            replications: self.replications,
            baseline: self.baseline,
            threads: self.parallel.threads(),
        };
        Ok(ResolvedRun { superpop, spec, coordinate_names: self.loss.coordinate_names() })
    }
}

/// Reads and validates a run file.
pub fn parse_config(path: &Path) -> Result<RunConfig, InterfaceError> {
    let text = std::fs::read_to_string(path).map_err(|e| InterfaceError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    RunConfig::from_toml(&text, base)
}

/// Settings for one-shot estimation on a real dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Wave mix for trace input; defaults to each wave's share of the
    /// expected label count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<f64>>,
    pub schema: SchemaConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
}

impl EstimateConfig {
    pub fn from_toml(text: &str) -> Result<Self, InterfaceError> {
        let config: EstimateConfig = toml::from_str(text).map_err(|e| InterfaceError::Parse(e.to_string()))?;
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(config_error("alpha", format!("{} not in (0, 1)", config.alpha)));
        }
        let schema: Schema = (&config.schema).into();
        schema.validate().map_err(|e| config_error("schema", e.to_string()))?;
        let loss = config.loss.build(&schema)?;
        config.tuning.build(loss.dim())?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, InterfaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| InterfaceError::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [population]
        source = "synthetic"
        rows = 20000

        [loss]
        kind = "linear"
        response = "y"
        covariates = ["z_cov", "z_trt"]

        [design]
        phase_one_size = 2000
        label_budget = 200
    "#;

    fn parse(text: &str) -> Result<RunConfig, InterfaceError> {
        RunConfig::from_toml(text, Path::new("."))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let config = parse(MINIMAL).unwrap();
        assert_eq!(config.replications, DEFAULT_REPLICATIONS);
        assert_eq!(config.alpha, 0.10);
        assert_eq!(config.tuning.build(3).unwrap(), TuningMode::Optimal);
        let design = config.design.build(config.seed).unwrap();
        assert_eq!(design.wave_budgets, vec![50.0, 150.0]);
        assert_eq!(design.c, vec![0.25, 0.75]);
        assert_eq!(design.b_targ, 150.0 / (100.0 * 2000.0));
        assert_eq!(config.loss.target_index().unwrap(), 2);
        assert_eq!(config.strategy, StrategySection::Knn { neighbors: 20, features: None });
    }

    #[test]
    fn zero_waves_rejected() {
        let text = MINIMAL.replace("label_budget = 200", "label_budget = 200\nwaves = 0");
        match parse(&text) {
            Err(InterfaceError::Config { key, .. }) => assert_eq!(key, "design.waves"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("rows = 20000", "rows = 20000\nflavour = 3");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("flavour"), "{err}");
        let top = format!("replicates = 3\n{MINIMAL}");
        assert!(parse(&top).unwrap_err().to_string().contains("replicates"));
    }

    #[test]
    fn zero_replications_rejected() {
        let text = format!("replications = 0\n{MINIMAL}");
        assert!(matches!(parse(&text), Err(InterfaceError::Config { .. })));
    }

    #[test]
    fn parallel_values() {
        assert_eq!(parse(&format!("parallel = 3\n{MINIMAL}")).unwrap().parallel, Parallelism::Threads(3));
        assert_eq!(parse(&format!("parallel = \"auto\"\n{MINIMAL}")).unwrap().parallel, Parallelism::Auto);
        assert!(parse(&format!("parallel = 0\n{MINIMAL}")).is_err());
        assert!(parse(&format!("parallel = \"many\"\n{MINIMAL}")).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let config = parse(MINIMAL).unwrap();
        let manifest = config.manifest().unwrap();
        let back = parse(&manifest).unwrap();
        assert_eq!(back.normalized().unwrap(), config.normalized().unwrap());
        assert_eq!(back.hash().unwrap(), config.hash().unwrap());
        let tampered = manifest.replace("replications = 100", "replications = 101");
        assert!(parse(&tampered).is_err());
    }

    #[test]
    fn bad_names_are_reported_with_key() {
        let text = MINIMAL.replace("\"z_trt\"]", "\"z_trt_proxy\"]");
        match parse(&text) {
            Err(InterfaceError::Config { key, .. }) => assert_eq!(key, "loss.covariates"),
            other => panic!("unexpected {other:?}"),
        }
        let text = format!("{MINIMAL}\n[strategy]\nkind = \"knn\"\nfeatures = [\"z_trt\"]\n");
        match parse(&text) {
            Err(InterfaceError::Config { key, .. }) => assert_eq!(key, "strategy.features"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_csv_is_rejected() {
        let text = MINIMAL.replace(
            "source = \"synthetic\"\n        rows = 20000",
            "source = \"csv\"\n        path = \"no/such/file.csv\"\n        schema = { common = [\"y\", \"z_cov\"], expensive = [\"z_trt\"], proxies = [\"z_trt_proxy\"] }",
        );
        match parse(&text) {
            Err(InterfaceError::Config { key, .. }) => assert_eq!(key, "population.path"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stratified_quantile_axes_resolve() {
        let text = format!(
            "{MINIMAL}\n[strategy]\nkind = \"stratified\"\n[[strategy.axes]]\ncolumn = \"y\"\nquantiles = 3\n\
             [[strategy.axes]]\ncolumn = \"z_cov\"\nquantiles = 3\n[[strategy.axes]]\ncolumn = \"z_trt_proxy\"\nbreakpoints = [0.5]\n"
        );
        let run = parse(&text).unwrap().resolve().unwrap();
        match &run.spec.strategy.kind {
            StrategyKind::GreedyStratified { strata } => assert_eq!(strata.grid_size(), Some(18)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wave_budgets_and_label_budget_are_exclusive() {
        let text = MINIMAL.replace("label_budget = 200", "label_budget = 200\nwave_budgets = [100, 100]");
        assert!(parse(&text).is_err());
        let text = MINIMAL.replace("label_budget = 200", "wave_budgets = [60, 140]");
        let config = parse(&text).unwrap();
        assert_eq!(config.design.build(0).unwrap().c, vec![0.3, 0.7]);
    }
}
