//! Configuration files, CSV persistence and the bodies of the `mpd`
//! subcommands.

mod commands;
mod config;
mod persist;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::simulation::SimulationError;

pub use commands::{cmd_estimate, cmd_gen_data, cmd_report, cmd_simulate, EstimateInput, SimulateOptions};
pub use config::{
    parse_config, DesignConfig, EstimateConfig, LossConfig, LossName, ManifestInfo, OutcomeName, Parallelism,
    PopulationConfig, ResolvedRun, RunConfig, SchemaConfig, StrategySection, StratumAxis, TuningConfig, TuningName,
};
pub use persist::{
    read_trace, read_weights, write_replications, write_summary, EstimationData, TraceRow, REPLICATION_COLUMNS,
    SUMMARY_COLUMNS,
};

/// Files written by `simulate`.
pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum InterfaceError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration at '{key}': {message}")]
    Config { key: String, message: String },
    #[error("{file} row {row}: {message}")]
    Data { file: String, row: usize, message: String },
    #[error("output directory {0} is not empty; pass --force to overwrite")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl InterfaceError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        InterfaceError::Io { path: path.to_path_buf(), message: err.to_string() }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            InterfaceError::Parse(_) | InterfaceError::Config { .. } => 2,
            InterfaceError::Data { .. } => 3,
            InterfaceError::Simulation(SimulationError::Table { .. })
            | InterfaceError::Simulation(SimulationError::MissingColumn(_))
            | InterfaceError::Simulation(SimulationError::Schema(_)) => 3,
            InterfaceError::Io { .. }
            | InterfaceError::OutputExists(_)
            | InterfaceError::Simulation(SimulationError::Io(_)) => 5,
            InterfaceError::Estimation(_) | InterfaceError::Simulation(_) => 4,
        }
    }
}
