//! Longitudinal vehicle behavior: IDM car following, ballistic integration,
//! signal stop logic and lane-change decisions.

mod lane_change;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corridor::Direction;
use crate::signal::PhaseState;

pub use lane_change::{
    lane_change_decision, mandatory_target, Follower, LaneChange, LaneView, Neighborhood,
    DISCRETIONARY_THRESHOLD, LANE_CHANGE_COOLDOWN, PANIC_DISTANCE, SAFE_DECEL,
};

pub const VEHICLE_LENGTH: f64 = 5.0;
/// Floor applied to every IDM acceleration.
pub const EMERGENCY_DECEL: f64 = 9.0;
/// Yellow dilemma threshold: stop when the required deceleration is at most this.
pub const DILEMMA_DECEL: f64 = 3.0;
/// Speeds below this count as stopped for queue bookkeeping.
pub const STOPPED_SPEED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DynamicsError {
    #[error("gap to leader must be positive, got {0} m")]
    NonPositiveGap(f64),
    #[error("driver parameter {0} out of range")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Automated,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Through,
    /// Leave via the jughandle of the intersection with this index.
    LeftAt(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams {
    /// Desired speed `v0`, m/s.
    pub desired_speed: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub min_gap: f64,
    /// Desired time headway `T`, s.
    pub headway: f64,
    pub startup_lost_time: f64,
}

impl DriverParams {
    /// Human driver; `speed_factor` scales the desired speed around the limit
    /// (drawn from `[0.9, 1.1]` by the engine).
    pub fn conventional(speed_limit: f64, speed_factor: f64) -> Self {
        Self {
            desired_speed: speed_limit * speed_factor,
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            headway: 1.5,
            startup_lost_time: 2.0,
        }
    }

    pub fn automated(speed_limit: f64) -> Self {
        Self {
            desired_speed: speed_limit,
            max_accel: 2.0,
            comfortable_decel: 2.5,
            min_gap: 1.0,
            headway: 0.9,
            startup_lost_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let checks = [
            (self.desired_speed, "desired_speed"),
            (self.max_accel, "max_accel"),
            (self.comfortable_decel, "comfortable_decel"),
            (self.min_gap, "min_gap"),
            (self.headway, "headway"),
        ];
        for (value, name) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(DynamicsError::InvalidParams(name));
            }
        }
        if !(self.startup_lost_time >= 0.0) {
            return Err(DynamicsError::InvalidParams("startup_lost_time"));
        }
        Ok(())
    }

    /// Steady-state bumper-to-bumper gap behind a leader moving at `speed`.
    pub fn equilibrium_gap(&self, speed: f64) -> f64 {
        let free = 1.0 - (speed / self.desired_speed).powi(4);
        (self.min_gap + speed * self.headway) / free.max(1e-12).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub class: VehicleClass,
    pub direction: Direction,
    /// Meters from the start of the direction chain (front bumper).
    pub position: f64,
    pub lane: usize,
    pub speed: f64,
    pub accel: f64,
    pub route: Route,
    /// Target speed issued by the control agent.
    pub advisory: Option<f64>,
    pub entry_time: f64,
    pub params: DriverParams,
}

impl Vehicle {
    /// Ballistic update; see [`advance`].
    pub fn advance(&mut self, accel: f64, dt: f64) -> f64 {
        let step = advance(self.speed, accel, dt);
        self.position += step.displacement;
        self.speed = step.speed;
        self.accel = accel;
        step.displacement
    }
}

/// What a follower sees ahead: bumper-to-bumper gap and the leader's speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

impl Leader {
    pub fn stopped_at(gap: f64) -> Self {
        Self { gap, speed: 0.0 }
    }
}

/// Intelligent Driver Model acceleration, floored at `-EMERGENCY_DECEL`.
pub fn idm_acceleration(
    speed: f64,
    leader: Option<Leader>,
    params: &DriverParams,
) -> Result<f64, DynamicsError> {
    let free = 1.0 - (speed / params.desired_speed).powi(4);
    let accel = match leader {
        None => params.max_accel * free,
        Some(l) => {
            if !(l.gap > 0.0) {
                return Err(DynamicsError::NonPositiveGap(l.gap));
            }
            let approach = speed - l.speed;
            let desired_gap = params.min_gap
                + (speed * params.headway
                    + speed * approach / (2.0 * (params.max_accel * params.comfortable_decel).sqrt()))
                .max(0.0);
            params.max_accel * (free - (desired_gap / l.gap).powi(2))
        }
    };
    Ok(accel.max(-EMERGENCY_DECEL))
}

/// IDM acceleration where a non-positive gap maps to the emergency floor.
pub(crate) fn idm_or_emergency(speed: f64, leader: Option<Leader>, params: &DriverParams) -> f64 {
    idm_acceleration(speed, leader, params).unwrap_or(-EMERGENCY_DECEL)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicStep {
    pub speed: f64,
    pub displacement: f64,
}

/// Constant-acceleration update over `dt` with the speed truncated at zero:
/// a vehicle that would reverse stops mid-step and stays put.
pub fn advance(speed: f64, accel: f64, dt: f64) -> KinematicStep {
    let next = speed + accel * dt;
    if next >= 0.0 {
        KinematicStep {
            speed: next,
            displacement: speed * dt + 0.5 * accel * dt * dt,
        }
    } else {
        KinematicStep {
            speed: 0.0,
            displacement: if accel < 0.0 { -speed * speed / (2.0 * accel) } else { 0.0 },
        }
    }
}

/// Like [`advance`], but the acceleration is lowered as far as needed so the
/// displacement does not exceed `max_displacement`. Returns the acceleration
/// actually applied alongside the step.
pub fn advance_bounded(speed: f64, accel: f64, dt: f64, max_displacement: f64) -> (f64, KinematicStep) {
    let step = advance(speed, accel, dt);
    if step.displacement <= max_displacement {
        return (accel, step);
    }
    let bound = max_displacement.max(0.0);
    if bound <= 0.0 {
        let a = if speed > 0.0 { -speed / dt } else { 0.0 };
        return (a, KinematicStep { speed: 0.0, displacement: 0.0 });
    }
    // Stays moving through the step when the bound is at least half the
    // distance covered at the current speed.
    if bound >= 0.5 * speed * dt {
        let a = 2.0 * (bound - speed * dt) / (dt * dt);
        let next = (speed + a * dt).max(0.0);
        (a, KinematicStep { speed: next, displacement: bound })
    } else {
        let a = -speed * speed / (2.0 * bound);
        (a, KinematicStep { speed: 0.0, displacement: bound })
    }
}

/// Inputs to the stop-bar logic for one vehicle and its next signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalApproach {
    pub class: VehicleClass,
    pub speed: f64,
    pub distance: f64,
    pub state: PhaseState,
    /// Seconds left in the current yellow or red interval.
    pub time_in_phase_left: f64,
    /// Seconds until the next green begins (0 while green).
    pub time_to_green: f64,
    /// Seconds since green onset, when green.
    pub green_elapsed: Option<f64>,
    /// First vehicle of its lane queue, stopped at the bar.
    pub queue_head: bool,
    pub params: DriverParams,
    /// The vehicle already committed to clearing this yellow.
    pub committed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalResponse {
    /// No constraint from the signal.
    Proceed,
    /// Cannot stop comfortably on yellow; keep going.
    CommitThroughYellow,
    /// Automated vehicle that reaches the bar after green onset at its
    /// current speed; it may keep or lower that speed but not raise it.
    HoldSpeed,
    /// Treat the stop bar as a stopped leader.
    Stop(Leader),
}

impl SignalResponse {
    pub fn leader(self) -> Option<Leader> {
        match self {
            SignalResponse::Stop(l) => Some(l),
            _ => None,
        }
    }
}

/// Stop-bar constraint for a vehicle approaching a signal.
///
/// Red presents a stopped virtual leader at the bar. Yellow does too unless the
/// comfortable stop is impossible and the bar can be cleared at the current
/// speed before red. On green a stopped conventional queue head stays held for
/// its start-up lost time. Automated vehicles know the signal timing: on red or
/// yellow they ignore the bar while even full acceleration cannot bring them
/// there before the next green onset, and ignore it without speeding up while
/// their current speed does.
pub fn signal_interaction(a: &SignalApproach) -> SignalResponse {
    let stop = SignalResponse::Stop(Leader::stopped_at(a.distance.max(1e-3)));
    match a.state {
        PhaseState::Green => {
            let held = a.class == VehicleClass::Conventional
                && a.queue_head
                && a.green_elapsed.is_some_and(|e| e < a.params.startup_lost_time);
            if held {
                stop
            } else {
                SignalResponse::Proceed
            }
        }
        PhaseState::Yellow | PhaseState::Red => {
            if a.state == PhaseState::Yellow && a.committed {
                return SignalResponse::CommitThroughYellow;
            }
            if a.class == VehicleClass::Automated {
                if earliest_arrival(a) >= a.time_to_green + GREEN_ARRIVAL_MARGIN {
                    return SignalResponse::Proceed;
                }
                if arrives_after_green(a) {
                    return SignalResponse::HoldSpeed;
                }
            }
            if a.state == PhaseState::Yellow && a.speed > 0.0 {
                let required = a.speed * a.speed / (2.0 * a.distance.max(1e-6));
                let clears = a.distance <= a.speed * a.time_in_phase_left;
                if required > DILEMMA_DECEL && clears {
                    return SignalResponse::CommitThroughYellow;
                }
            }
            stop
        }
    }
}

const GREEN_ARRIVAL_MARGIN: f64 = 0.1;

// Arrival time when accelerating flat out towards the desired speed.
fn earliest_arrival(a: &SignalApproach) -> f64 {
    let (v, v0, acc, d) = (a.speed, a.params.desired_speed.max(a.speed), a.params.max_accel, a.distance);
    let d_acc = (v0 * v0 - v * v) / (2.0 * acc);
    if d_acc >= d {
        (-v + (v * v + 2.0 * acc * d).sqrt()) / acc
    } else {
        (v0 - v) / acc + (d - d_acc) / v0
    }
}

fn arrives_after_green(a: &SignalApproach) -> bool {
    a.speed > 1.0 && a.distance / a.speed >= a.time_to_green + GREEN_ARRIVAL_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIMIT: f64 = 24.59;

    fn approach(class: VehicleClass, state: PhaseState) -> SignalApproach {
        SignalApproach {
            class,
            speed: 0.0,
            distance: 50.0,
            state,
            time_in_phase_left: 30.0,
            time_to_green: 30.0,
            green_elapsed: None,
            queue_head: false,
            params: match class {
                VehicleClass::Automated => DriverParams::automated(LIMIT),
                VehicleClass::Conventional => DriverParams::conventional(LIMIT, 1.0),
            },
            committed: false,
        }
    }

    #[test]
    fn idm_free_flow_equilibrium() {
        let p = DriverParams::automated(LIMIT);
        assert_eq!(idm_acceleration(LIMIT, None, &p).unwrap(), 0.0);
    }

    #[test]
    fn idm_standstill_equilibrium() {
        let p = DriverParams::conventional(LIMIT, 1.0);
        let a = idm_acceleration(0.0, Some(Leader::stopped_at(p.min_gap)), &p).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn idm_free_road_value() {
        let p = DriverParams::conventional(LIMIT, 1.0);
        let a = idm_acceleration(10.0, None, &p).unwrap();
        let expected = 1.5 * (1.0 - (10.0f64 / 24.59).powi(4));
        assert!((a - expected).abs() < 1e-12);
        assert!((a - 1.459).abs() < 1e-3);
    }

    #[test]
    fn idm_rejects_non_positive_gap() {
        let p = DriverParams::automated(LIMIT);
        assert_eq!(
            idm_acceleration(5.0, Some(Leader::stopped_at(0.0)), &p),
            Err(DynamicsError::NonPositiveGap(0.0))
        );
    }

    #[test]
    fn idm_emergency_floor() {
        let p = DriverParams::automated(LIMIT);
        let a = idm_acceleration(LIMIT, Some(Leader::stopped_at(0.5)), &p).unwrap();
        assert_eq!(a, -EMERGENCY_DECEL);
    }

    #[test]
    fn advance_examples() {
        let s = advance(10.0, 1.0, 0.1);
        assert!((s.speed - 10.1).abs() < 1e-12);
        assert!((s.displacement - 1.005).abs() < 1e-12);

        let s = advance(0.05, -2.0, 0.1);
        assert_eq!(s.speed, 0.0);
        assert!((s.displacement - 0.000625).abs() < 1e-15);

        let s = advance(0.0, 0.0, 0.1);
        assert_eq!(s, KinematicStep { speed: 0.0, displacement: 0.0 });
    }

    #[test]
    fn advance_bounded_respects_limit() {
        let (a, s) = advance_bounded(20.0, 0.0, 0.1, 1.0);
        assert!((s.displacement - 1.0).abs() < 1e-12);
        assert!(a < 0.0);
        assert_eq!(s.speed, 0.0);

        let (a, s) = advance_bounded(20.0, 1.0, 0.1, 1.5);
        assert!((s.displacement - 1.5).abs() < 1e-12);
        assert!((advance(20.0, a, 0.1).displacement - 1.5).abs() < 1e-9);

        let (a, s) = advance_bounded(5.0, 1.0, 0.1, 10.0);
        assert_eq!(a, 1.0);
        assert_eq!(s, advance(5.0, 1.0, 0.1));
    }

    #[test]
    fn red_presents_virtual_leader() {
        let r = signal_interaction(&approach(VehicleClass::Conventional, PhaseState::Red));
        assert_eq!(r, SignalResponse::Stop(Leader { gap: 50.0, speed: 0.0 }));
    }

    #[test]
    fn conventional_queue_head_held_for_lost_time() {
        // Lost-time bookkeeping: held while elapsed < lost time, released after.
        let mut a = approach(VehicleClass::Conventional, PhaseState::Green);
        a.queue_head = true;
        a.distance = 2.0;
        a.green_elapsed = Some(0.5);
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
        a.green_elapsed = Some(1.99);
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
        a.green_elapsed = Some(2.0);
        assert_eq!(signal_interaction(&a), SignalResponse::Proceed);
        // only the queue head is held
        a.green_elapsed = Some(0.5);
        a.queue_head = false;
        assert_eq!(signal_interaction(&a), SignalResponse::Proceed);
    }

    #[test]
    fn automated_queue_head_released_at_onset() {
        let mut a = approach(VehicleClass::Automated, PhaseState::Green);
        a.queue_head = true;
        a.distance = 1.0;
        a.green_elapsed = Some(0.0);
        assert_eq!(signal_interaction(&a), SignalResponse::Proceed);
    }

    #[test]
    fn yellow_dilemma() {
        let mut a = approach(VehicleClass::Conventional, PhaseState::Yellow);
        a.time_in_phase_left = 4.0;
        // 20 m/s at 150 m: 1.33 m/s² needed, stop
        a.speed = 20.0;
        a.distance = 150.0;
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
        // 20 m/s at 40 m: 5 m/s² needed and the bar is 2 s away, go
        a.distance = 40.0;
        assert_eq!(signal_interaction(&a), SignalResponse::CommitThroughYellow);
        // 20 m/s at 60 m with only 1 s of yellow left: must stop anyway
        a.distance = 60.0;
        a.time_in_phase_left = 1.0;
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
    }

    #[test]
    fn automated_ignores_red_it_will_not_reach() {
        let mut a = approach(VehicleClass::Automated, PhaseState::Red);
        a.speed = 10.0;
        a.distance = 200.0;
        a.time_to_green = 15.0;
        assert_eq!(signal_interaction(&a), SignalResponse::HoldSpeed);
        // flat-out acceleration still reaches the bar only after about 10.3 s
        a.time_to_green = 8.0;
        assert_eq!(signal_interaction(&a), SignalResponse::Proceed);
        a.time_to_green = 25.0;
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
        // conventional drivers always see the red
        a.class = VehicleClass::Conventional;
        a.time_to_green = 15.0;
        assert!(matches!(signal_interaction(&a), SignalResponse::Stop(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // Leader follows a random bounded acceleration profile; the IDM
            // follower must keep a positive gap on every step.
            #[test]
            fn idm_follower_never_collides(
                seed_accels in prop::collection::vec(-4.0..2.0f64, 1600),
                auto in any::<bool>(),
                v_start in 0.0..24.0f64,
                factor in 0.9..1.1f64,
            ) {
                let p = if auto { DriverParams::automated(LIMIT) } else { DriverParams::conventional(LIMIT, factor) };
                let dt = 0.1;
                let mut lead_x = p.equilibrium_gap(v_start) + VEHICLE_LENGTH;
                let mut lead_v = v_start;
                let mut x = 0.0;
                let mut v = v_start;
                for &la in &seed_accels {
                    let gap = lead_x - VEHICLE_LENGTH - x;
                    prop_assert!(gap > 0.0, "gap {gap}");
                    let a = idm_acceleration(v, Some(Leader { gap, speed: lead_v }), &p).unwrap();
                    // the leader cannot exceed the limit either
                    let la = if lead_v >= LIMIT * 1.1 { la.min(0.0) } else { la };
                    let ls = advance(lead_v, la, dt);
                    lead_x += ls.displacement;
                    lead_v = ls.speed;
                    let s = advance(v, a, dt);
                    x += s.displacement;
                    v = s.speed;
                    prop_assert!(v <= p.desired_speed.max(v_start) + 1e-9);
                }
            }

            #[test]
            fn platoon_holds_equilibrium_spacing(speed in 5.0..20.0f64, auto in any::<bool>()) {
                let follower = if auto { DriverParams::automated(LIMIT) } else { DriverParams::conventional(LIMIT, 1.0) };
                // the leader cruises freely at `speed`
                let leader = DriverParams { desired_speed: speed, ..follower };
                let spacing = follower.equilibrium_gap(speed);
                let dt = 0.1;
                let n = 5;
                let mut xs: Vec<f64> = (0..n).map(|i| -(i as f64) * (spacing + VEHICLE_LENGTH)).collect();
                let mut vs = vec![speed; n];
                for _ in 0..600 {
                    let mut accels = vec![0.0; n];
                    accels[0] = idm_acceleration(vs[0], None, &leader).unwrap();
                    for i in 1..n {
                        let gap = xs[i - 1] - VEHICLE_LENGTH - xs[i];
                        accels[i] = idm_acceleration(vs[i], Some(Leader { gap, speed: vs[i - 1] }), &follower).unwrap();
                    }
                    for i in 0..n {
                        let s = advance(vs[i], accels[i], dt);
                        xs[i] += s.displacement;
                        vs[i] = s.speed;
                    }
                    for i in 1..n {
                        let gap = xs[i - 1] - VEHICLE_LENGTH - xs[i];
                        prop_assert!((gap - spacing).abs() <= 0.01 * spacing, "gap {gap} vs {spacing}");
                    }
                }
            }
        }
    }
}
