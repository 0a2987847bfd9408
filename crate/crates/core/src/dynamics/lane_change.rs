use crate::corridor::Lane;
use crate::reservation::{lane_access, LaneAccess, LaneObligation, ObligationKind};

use super::{idm_or_emergency, DriverParams, Leader, Vehicle, VehicleClass};

/// Minimum own-acceleration gain (m/s²) for a discretionary change.
pub const DISCRETIONARY_THRESHOLD: f64 = 0.2;
/// Largest deceleration a change may impose on the new follower, or on the
/// changing vehicle itself.
pub const SAFE_DECEL: f64 = 4.0;
pub const LANE_CHANGE_COOLDOWN: f64 = 2.0;
/// An unmet obligation this close to its deadline triggers the panic rule.
pub const PANIC_DISTANCE: f64 = 100.0;

/// Distance before the deadline at which leaving a reserved lane becomes mandatory.
const EXIT_ACTIVATION: f64 = 500.0;
/// Per lane to cross, distance before the diverge at which moving right becomes mandatory.
const RIGHTMOST_ACTIVATION_PER_LANE: f64 = 250.0;
const RIGHTMOST_ACTIVATION_BASE: f64 = 150.0;
/// No discretionary moves to the left this close to a required diverge.
const LEFT_LOCK_DISTANCE: f64 = 1000.0;
/// Extra incentive for automated vehicles to join (and stay in) reserved lanes.
const RESERVED_LANE_BIAS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChange {
    Stay,
    MoveLeft,
    MoveRight,
}

/// Vehicle that would end up directly behind the changer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Follower {
    /// Gap from the follower's front to the changer's rear.
    pub gap: f64,
    pub speed: f64,
    pub params: DriverParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneView {
    pub lane: Lane,
    pub leader: Option<Leader>,
    pub follower: Option<Follower>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighborhood {
    pub current: Lane,
    pub lane_count: usize,
    pub leader: Option<Leader>,
    /// Stop-bar constraint; identical for every lane.
    pub signal: Option<Leader>,
    pub left: Option<LaneView>,
    pub right: Option<LaneView>,
}

fn own_accel(vehicle: &Vehicle, leader: Option<Leader>, signal: Option<Leader>) -> f64 {
    let car = idm_or_emergency(vehicle.speed, leader, &vehicle.params);
    match signal {
        Some(s) => car.min(idm_or_emergency(vehicle.speed, Some(s), &vehicle.params)),
        None => car,
    }
}

fn is_safe(vehicle: &Vehicle, target: &LaneView, signal: Option<Leader>) -> bool {
    if let Some(l) = target.leader {
        if l.gap < vehicle.params.min_gap {
            return false;
        }
    }
    if own_accel(vehicle, target.leader, signal) < -SAFE_DECEL {
        return false;
    }
    match target.follower {
        None => true,
        Some(f) => {
            f.gap >= f.params.min_gap
                && idm_or_emergency(
                    f.speed,
                    Some(Leader { gap: f.gap, speed: vehicle.speed }),
                    &f.params,
                ) >= -SAFE_DECEL
        }
    }
}

/// A lane change the obligations currently require, with the distance left
/// to its deadline.
pub fn mandatory_target(
    vehicle: &Vehicle,
    nb: &Neighborhood,
    obligations: &[LaneObligation],
) -> Option<(LaneChange, f64)> {
    let rightmost = nb.lane_count.saturating_sub(1);
    let lane = usize::from(nb.current.index);
    let mut best: Option<f64> = None;
    for ob in obligations {
        let remaining = match ob.kind {
            ObligationKind::KeepOutOfReserved if nb.current.reserved => Some(0.0),
            ObligationKind::ExitReservedBefore(p) if nb.current.reserved => {
                let d = p - vehicle.position;
                (d <= EXIT_ACTIVATION).then_some(d)
            }
            ObligationKind::ReachRightmostBefore(p) if lane < rightmost => {
                let d = p - vehicle.position;
                let lanes = (rightmost - lane) as f64;
                (d <= RIGHTMOST_ACTIVATION_BASE + RIGHTMOST_ACTIVATION_PER_LANE * lanes).then_some(d)
            }
            _ => None,
        };
        if let Some(d) = remaining {
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    best.map(|d| (LaneChange::MoveRight, d))
}

/// Chooses between staying and moving one lane left or right.
///
/// Mandatory obligations dominate: when one is active the vehicle moves right
/// as soon as the target gap is safe and never considers anything else.
/// Otherwise the change must raise the vehicle's own IDM acceleration by more
/// than [`DISCRETIONARY_THRESHOLD`] and keep both the vehicle and its new
/// follower above `-SAFE_DECEL`.
pub fn lane_change_decision(
    vehicle: &Vehicle,
    nb: &Neighborhood,
    obligations: &[LaneObligation],
    prefer_left: bool,
) -> LaneChange {
    if let Some((side, _)) = mandatory_target(vehicle, nb, obligations) {
        let target = match side {
            LaneChange::MoveRight => nb.right,
            LaneChange::MoveLeft => nb.left,
            LaneChange::Stay => None,
        };
        return match target {
            Some(view)
                if lane_access(vehicle.class, view.lane) == LaneAccess::Allowed
                    && is_safe(vehicle, &view, nb.signal) =>
            {
                side
            }
            _ => LaneChange::Stay,
        };
    }

    let left_locked = obligations.iter().any(|ob| match ob.kind {
        ObligationKind::ReachRightmostBefore(p) => p - vehicle.position <= LEFT_LOCK_DISTANCE,
        _ => false,
    });
    let current = own_accel(vehicle, nb.leader, nb.signal);
    let gain = |view: &LaneView| -> Option<f64> {
        if lane_access(vehicle.class, view.lane) == LaneAccess::Forbidden {
            return None;
        }
        let keep_out = obligations
            .iter()
            .any(|ob| ob.kind == ObligationKind::KeepOutOfReserved);
        if keep_out && view.lane.reserved {
            return None;
        }
        if !is_safe(vehicle, view, nb.signal) {
            return None;
        }
        let mut g = own_accel(vehicle, view.leader, nb.signal) - current;
        if vehicle.class == VehicleClass::Automated {
            if view.lane.reserved && !nb.current.reserved {
                g += RESERVED_LANE_BIAS;
            } else if nb.current.reserved && !view.lane.reserved {
                g -= RESERVED_LANE_BIAS;
            }
        }
        (g > DISCRETIONARY_THRESHOLD).then_some(g)
    };

    let left = if left_locked { None } else { nb.left.as_ref().and_then(gain) };
    let right = nb.right.as_ref().and_then(gain);
    match (left, right) {
        (None, None) => LaneChange::Stay,
        (Some(_), None) => LaneChange::MoveLeft,
        (None, Some(_)) => LaneChange::MoveRight,
        (Some(l), Some(r)) => {
            if l > r || (l == r && prefer_left) {
                LaneChange::MoveLeft
            } else {
                LaneChange::MoveRight
            }
        }
    }
}
