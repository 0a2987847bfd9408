//! Scenario description and its TOML file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::agent::AdvisoryPlanner;
use crate::corridor::spec::error_line;
use crate::corridor::Corridor;
use crate::dynamics::DriverParams;
use crate::reservation::{recommended_reserved_lanes, LosClass};

/// How many inner lanes are reserved for automated vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReservedLaneMode {
    Off,
    Fixed(usize),
    /// Follow the recommended policy for the scenario's LOS and mp.
    Auto,
}

impl ReservedLaneMode {
    /// Number of reserved lanes this mode yields on `corridor`. `Auto` is
    /// capped so at least one general lane remains.
    pub fn resolve(self, los: LosClass, mp: f64, corridor: &Corridor) -> Result<usize, EngineError> {
        let max = corridor.min_lane_count().saturating_sub(1);
        match self {
            ReservedLaneMode::Off => Ok(0),
            ReservedLaneMode::Fixed(n) if n > max => Err(EngineError::ConfigInvalid(format!(
                "fixed({n}) needs at least {} lanes everywhere, corridor has {}",
                n + 1,
                corridor.min_lane_count()
            ))),
            ReservedLaneMode::Fixed(n) => Ok(n),
            ReservedLaneMode::Auto => recommended_reserved_lanes(los, mp)
                .map(|n| n.min(max))
                .map_err(|e| EngineError::ConfigInvalid(e.to_string())),
        }
    }
}

impl fmt::Display for ReservedLaneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReservedLaneMode::Off => f.write_str("off"),
            ReservedLaneMode::Auto => f.write_str("auto"),
            ReservedLaneMode::Fixed(n) => write!(f, "fixed({n})"),
        }
    }
}

impl FromStr for ReservedLaneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t {
            "off" => return Ok(ReservedLaneMode::Off),
            "auto" => return Ok(ReservedLaneMode::Auto),
            _ => {}
        }
        let inner = t
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| t.strip_prefix("fixed:"));
        match inner.map(|n| n.trim().parse::<usize>()) {
            Some(Ok(n)) => Ok(ReservedLaneMode::Fixed(n)),
            _ => Err(format!("unknown reserved lane mode {s:?} (expected off, auto or fixed(N))")),
        }
    }
}

impl TryFrom<String> for ReservedLaneMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ReservedLaneMode> for String {
    fn from(m: ReservedLaneMode) -> Self {
        m.to_string()
    }
}

/// Demand overrides; unset fields come from [`super::demand_for`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_flow: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_flow: Option<f64>,
    /// Left-turn fraction at every intersection that serves left turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_turn_fraction: Option<f64>,
}

/// Partial driver parameters; set fields replace the class defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_accel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comfortable_decel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headway: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_lost_time: Option<f64>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: DriverParams) -> DriverParams {
        if let Some(v) = self.max_accel {
            p.max_accel = v;
        }
        if let Some(v) = self.comfortable_decel {
            p.comfortable_decel = v;
        }
        if let Some(v) = self.min_gap {
            p.min_gap = v;
        }
        if let Some(v) = self.headway {
            p.headway = v;
        }
        if let Some(v) = self.startup_lost_time {
            p.startup_lost_time = v;
        }
        p
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn default_corridor() -> String {
    "princeton".to_string()
}
fn default_warmup() -> f64 {
    900.0
}
fn default_duration() -> f64 {
    3600.0
}
fn default_dt() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Bundled test bed name or path to a corridor file.
    #[serde(default = "default_corridor")]
    pub corridor: String,
    pub los: LosClass,
    pub mp: f64,
    #[serde(default = "default_mode")]
    pub reserved_lane_mode: ReservedLaneMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "is_default_demand")]
    pub demand: DemandOverride,
    #[serde(default = "AdvisoryPlanner::in_engine")]
    pub agent: AdvisoryPlanner,
    #[serde(default, skip_serializing_if = "ParamOverrides::is_empty")]
    pub automated: ParamOverrides,
    #[serde(default, skip_serializing_if = "ParamOverrides::is_empty")]
    pub conventional: ParamOverrides,
}

fn default_mode() -> ReservedLaneMode {
    ReservedLaneMode::Off
}

fn is_default_demand(d: &DemandOverride) -> bool {
    *d == DemandOverride::default()
}

impl ScenarioConfig {
    pub fn new(corridor: &str, los: LosClass, mp: f64, mode: ReservedLaneMode, seed: u64) -> Self {
        Self {
            corridor: corridor.to_string(),
            los,
            mp,
            reserved_lane_mode: mode,
            seed,
            warmup: default_warmup(),
            duration: default_duration(),
            dt: default_dt(),
            demand: DemandOverride::default(),
            agent: AdvisoryPlanner::in_engine(),
            automated: ParamOverrides::default(),
            conventional: ParamOverrides::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EngineError::Parse {
            line: error_line(text, e.span()),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    /// Number of simulation steps covering warmup and duration.
    pub fn total_steps(&self) -> u64 {
        ((self.warmup + self.duration) / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::ConfigInvalid(m));
        if !(0.0..=1.0).contains(&self.mp) {
            return bad(format!("mp must lie in [0, 1], got {}", self.mp));
        }
        if !(self.warmup >= 0.0) || !self.warmup.is_finite() {
            return bad(format!("warmup must be >= 0, got {}", self.warmup));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        let ratio = self.agent.control_interval / self.dt;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "control interval {} must be a positive multiple of dt {}",
                self.agent.control_interval, self.dt
            ));
        }
        if !(self.agent.vmin_factor > 0.0 && self.agent.vmin_factor <= 1.0) {
            return bad(format!("vmin_factor must lie in (0, 1], got {}", self.agent.vmin_factor));
        }
        if !(self.agent.accel > 0.0 && self.agent.decel > 0.0) {
            return bad("advisory accel and decel must be positive".to_string());
        }
        if let Some(f) = self.demand.left_turn_fraction {
            if !(0.0..=0.5).contains(&f) {
                return bad(format!("left_turn_fraction must lie in [0, 0.5], got {f}"));
            }
        }
        for flow in [self.demand.forward_flow, self.demand.reverse_flow].into_iter().flatten() {
            if !(flow >= 0.0) || !flow.is_finite() {
                return bad(format!("flows must be >= 0, got {flow}"));
            }
        }
        for (name, o, base) in [
            ("automated", self.automated, DriverParams::automated(20.0)),
            ("conventional", self.conventional, DriverParams::conventional(20.0, 1.0)),
        ] {
            o.apply(base)
                .validate()
                .map_err(|e| EngineError::ConfigInvalid(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}
