//! Reserved-lane policy: how many inner lanes to reserve for automated
//! vehicles, who may use them, and the lane obligations that follow.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::{Corridor, Lane};
use crate::dynamics::{Route, Vehicle, VehicleClass};

/// Distance before a jughandle diverge by which automated left-turners must
/// have left the reserved lanes.
pub const EXIT_MARGIN: f64 = 300.0;

// Absorbs representation error in market-penetration fractions such as 0.1.
const MP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReservationError {
    #[error("market penetration {0} outside [0, 1]")]
    MpOutOfRange(f64),
    #[error("unknown intersection index {0}")]
    UnknownIntersection(usize),
    #[error("unknown level of service {0:?} (expected A_to_C or C_to_E)")]
    UnknownLos(String),
}

/// Congestion regime of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LosClass {
    #[serde(rename = "A_to_C")]
    AToC,
    #[serde(rename = "C_to_E")]
    CToE,
}

impl LosClass {
    pub const ALL: [LosClass; 2] = [LosClass::AToC, LosClass::CToE];

    pub fn as_str(self) -> &'static str {
        match self {
            LosClass::AToC => "A_to_C",
            LosClass::CToE => "C_to_E",
        }
    }
}

impl fmt::Display for LosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LosClass {
    type Err = ReservationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A_to_C" | "a_to_c" | "C" | "c" => Ok(LosClass::AToC),
            "C_to_E" | "c_to_e" | "E" | "e" => Ok(LosClass::CToE),
            other => Err(ReservationError::UnknownLos(other.to_string())),
        }
    }
}

/// Recommended number of reserved inner lanes for a congestion regime and
/// market penetration.
///
/// Uncongested: none below 10%, one from 10%, two from 50%.
/// Congested: none up to 60%, two above it.
pub fn recommended_reserved_lanes(los: LosClass, mp: f64) -> Result<usize, ReservationError> {
    if !(0.0..=1.0).contains(&mp) {
        return Err(ReservationError::MpOutOfRange(mp));
    }
    Ok(match los {
        LosClass::AToC => {
            if mp < 0.10 - MP_EPS {
                0
            } else if mp < 0.50 - MP_EPS {
                1
            } else {
                2
            }
        }
        LosClass::CToE => {
            if mp <= 0.60 + MP_EPS {
                0
            } else {
                2
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneAccess {
    Allowed,
    Forbidden,
}

pub fn lane_access(class: VehicleClass, lane: Lane) -> LaneAccess {
    match (class, lane.reserved) {
        (VehicleClass::Conventional, true) => LaneAccess::Forbidden,
        _ => LaneAccess::Allowed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObligationKind {
    /// Leave the reserved lanes before this chain position.
    ExitReservedBefore(f64),
    KeepOutOfReserved,
    /// Be in the right-most lane before this chain position.
    ReachRightmostBefore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneObligation {
    pub vehicle: u64,
    pub kind: ObligationKind,
}

/// Lane obligations implied by a vehicle's class, route and current lane.
pub fn obligations_for(vehicle: &Vehicle, corridor: &Corridor) -> Result<Vec<LaneObligation>, ReservationError> {
    let mut out = Vec::with_capacity(2);
    let push = |out: &mut Vec<LaneObligation>, kind| {
        out.push(LaneObligation {
            vehicle: vehicle.id,
            kind,
        })
    };
    if vehicle.class == VehicleClass::Conventional {
        push(&mut out, ObligationKind::KeepOutOfReserved);
    }
    if let Route::LeftAt(node) = vehicle.route {
        if node >= corridor.intersections.len() {
            return Err(ReservationError::UnknownIntersection(node));
        }
        let diverge = corridor
            .diverge_position(vehicle.direction, node)
            .ok_or(ReservationError::UnknownIntersection(node))?;
        let in_reserved = corridor.is_reserved(vehicle.direction, vehicle.lane);
        if vehicle.class == VehicleClass::Automated && in_reserved {
            push(&mut out, ObligationKind::ExitReservedBefore(diverge - EXIT_MARGIN));
        }
        push(&mut out, ObligationKind::ReachRightmostBefore(diverge));
    }
    Ok(out)
}
