//! Fixed-step simulation of one scenario: demand, signals, agent, vehicles
//! and metrics.

mod config;
mod demand;
mod metrics;
mod world;

use thiserror::Error;

use crate::corridor::CorridorError;

pub use config::{DemandOverride, ParamOverrides, ReservedLaneMode, ScenarioConfig};
pub use demand::{demand_for, target_vc, DemandProfile, DEFAULT_LEFT_TURN_FRACTION, SATURATION_FLOW};
pub use metrics::{AuditCounts, IntervalMetrics, RunMetrics, INTERVAL};
pub use world::World;


#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Corridor(#[from] CorridorError),
}

/// Runs one scenario from start to finish.
pub fn run(config: &ScenarioConfig) -> Result<RunMetrics, EngineError> {
    Ok(World::new(config)?.run_to_end())
}
