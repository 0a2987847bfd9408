//! Microscopic simulation of signalized arterial corridors with connected
//! automated vehicles and optional reserved lanes.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod corridor;
pub mod dynamics;
pub mod engine;
pub mod harness;
pub mod reservation;
pub mod signal;

pub use agent::{compute_advisory, Advisory, AdvisoryPlanner};
pub use corridor::{Corridor, CorridorError, Direction};
pub use dynamics::{DriverParams, Route, Vehicle, VehicleClass};
pub use engine::{run, EngineError, ReservedLaneMode, RunMetrics, ScenarioConfig, World};
pub use harness::{compare, emit_report, sweep, ComparisonRow, HarnessError, ReportFormat, ResultRow, SweepConfig};
pub use reservation::{recommended_reserved_lanes, LosClass};
pub use signal::{GreenWindow, PhaseState, SignalPlan};
