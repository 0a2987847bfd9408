//! Corridor file format.
//!
//! A corridor file is TOML: top-level `name`, one `[[intersection]]` table per
//! signalized node and one `[[link]]` table per directed link. Links of one
//! direction are listed upstream to downstream. Units are meters and
//! meters/second.

use serde::{Deserialize, Serialize};

use super::{Corridor, CorridorError, Direction, JughandleRamp, Lane};
use crate::signal::SignalPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSpec {
    pub name: String,
    #[serde(default)]
    pub intersection: Vec<IntersectionSpec>,
    #[serde(default)]
    pub link: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionSpec {
    pub id: String,
    #[serde(default)]
    pub left_turns: bool,
    #[serde(default)]
    pub through_only: bool,
    pub stopbar_positions: StopBarSpec,
    pub signal: SignalPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jughandle: Option<JughandleSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopBarSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JughandleSpec {
    pub diverge_position: f64,
    pub ramp_length: f64,
    pub target: String,
}

impl From<JughandleSpec> for JughandleRamp {
    fn from(s: JughandleSpec) -> Self {
        JughandleRamp {
            diverge_position: s.diverge_position,
            ramp_length: s.ramp_length,
            target: s.target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub direction: Direction,
    pub length: f64,
    pub speed_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream: Option<String>,
    pub lanes: Vec<Lane>,
}

impl CorridorSpec {
    pub fn parse(text: &str) -> Result<Self, CorridorError> {
        toml::from_str(text).map_err(|e| CorridorError::Parse {
            line: error_line(text, e.span()),
            message: e.message().to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("corridor spec is always representable as TOML")
    }

    pub(super) fn from_corridor(c: &Corridor) -> Self {
        let intersection = c
            .intersections
            .iter()
            .map(|n| IntersectionSpec {
                id: n.id.clone(),
                left_turns: n.left_turns,
                through_only: n.through_only,
                stopbar_positions: StopBarSpec {
                    forward: n.stopbar_positions[Direction::Forward.index()],
                    reverse: n.stopbar_positions[Direction::Reverse.index()],
                },
                signal: n.signal.clone(),
                jughandle: n.jughandle.as_ref().map(|r| JughandleSpec {
                    diverge_position: r.diverge_position,
                    ramp_length: r.ramp_length,
                    target: r.target.clone(),
                }),
            })
            .collect();
        let link = c
            .links
            .iter()
            .map(|l| LinkSpec {
                id: l.id.clone(),
                direction: l.direction,
                length: l.length,
                speed_limit: l.speed_limit,
                downstream: l.downstream.map(|i| c.intersections[i].id.clone()),
                lanes: l.lanes.clone(),
            })
            .collect();
        CorridorSpec {
            name: c.name.clone(),
            intersection,
            link,
        }
    }
}

/// 1-based line number of a byte span start.
pub(crate) fn error_line(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    match span {
        Some(r) => text[..r.start.min(text.len())].matches('\n').count() + 1,
        None => 0,
    }
}
