//! Two-phase multiwave adaptive sampling with predict-then-debias
//! M-estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`sampling`] runs Bernoulli waves and computes multiwave
//!   inverse-probability weights;
//! * [`losses`] and [`estimators`] fit weighted M-estimators and combine
//!   them into the MPD estimate;
//! * [`inference`] builds the plug-in sandwich covariance and intervals;
//! * [`strategies`] learns labelling rules between waves;
//! * [`simulation`] runs paired Monte Carlo studies;
//! * [`interface`] holds configuration, CSV I/O and the command bodies used
//!   by the `mpd` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod inference;
pub mod interface;
pub mod linalg;
pub mod losses;
pub mod rng;
pub mod sampling;
pub mod simulation;
pub mod strategies;

use thiserror::Error;

pub use estimators::{estimate, EstimateReport, TuningMode, WeightedDesign};
pub use losses::{LossKind, LossModel};
pub use sampling::{ObservedStudy, StudyDesign, UnitRecord};
pub use strategies::{LabelRule, StrategyConfig, StrategyKind};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Loss(#[from] losses::LossError),
    #[error(transparent)]
    Estimation(#[from] estimators::EstimationError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Strategy(#[from] strategies::StrategyError),
    #[error(transparent)]
    Simulation(#[from] simulation::SimulationError),
    #[error(transparent)]
    Interface(#[from] interface::InterfaceError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
