//! Centralized speed-advisory agent for automated vehicles.
//!
//! Once per control interval the agent reads every automated vehicle and every
//! signal, and issues each vehicle one constant target speed chosen so that it
//! reaches its next stop bar inside a green window.

use serde::{Deserialize, Serialize};

use crate::corridor::{Corridor, Direction};
use crate::dynamics::{Route, Vehicle, VehicleClass};
use crate::signal::{PhaseState, SignalPlan};

/// Vehicles slower than this count as queued when estimating discharge delay.
pub const QUEUE_SPEED: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquippedState {
    pub id: u64,
    pub direction: Direction,
    pub position: f64,
    pub speed: f64,
    pub lane: usize,
    pub route: Route,
    /// Advisory currently being followed.
    pub advisory: Option<f64>,
}

/// A slow vehicle of either class, used only for queue estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedVehicle {
    pub direction: Direction,
    pub lane: usize,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    pub intersection: usize,
    pub phase: PhaseState,
    pub plan: SignalPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSnapshot {
    pub time: f64,
    pub equipped_states: Vec<EquippedState>,
    pub signal_states: Vec<SignalState>,
    pub queued: Vec<QueuedVehicle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub vehicle: u64,
    pub target_speed: f64,
    pub valid_until: f64,
}

/// Reads the automated vehicles, the queues and every signal at `time`.
pub fn collect<'a>(
    time: f64,
    corridor: &Corridor,
    vehicles: impl IntoIterator<Item = &'a Vehicle>,
) -> SystemSnapshot {
    let mut equipped_states = Vec::new();
    let mut queued = Vec::new();
    for v in vehicles {
        if v.speed < QUEUE_SPEED {
            queued.push(QueuedVehicle {
                direction: v.direction,
                lane: v.lane,
                position: v.position,
            });
        }
        if v.class == VehicleClass::Automated {
            equipped_states.push(EquippedState {
                id: v.id,
                direction: v.direction,
                position: v.position,
                speed: v.speed,
                lane: v.lane,
                route: v.route,
                advisory: v.advisory,
            });
        }
    }
    let signal_states = corridor
        .intersections
        .iter()
        .enumerate()
        .map(|(i, n)| SignalState {
            intersection: i,
            phase: n.signal.phase_state(time),
            plan: n.signal.clone(),
        })
        .collect();
    SystemSnapshot {
        time,
        equipped_states,
        signal_states,
        queued,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisoryPlanner {
    /// Acceleration used by the arrival-time model, m/s².
    pub accel: f64,
    /// Deceleration used by the arrival-time model, m/s².
    pub decel: f64,
    /// Arrival must come at least this long after a green window opens.
    pub start_margin: f64,
    /// Arrival must come at least this long before a green window closes.
    pub end_margin: f64,
    /// End margin for a vehicle already told to run at `v_max` for the
    /// current window, so that small tracking delays do not flip it to the
    /// next one.
    pub committed_end_margin: f64,
    pub horizon_cycles: u32,
    /// Seconds of discharge per queued vehicle ahead.
    pub queue_discharge: f64,
    /// `v_min` as a fraction of the approach speed limit.
    pub vmin_factor: f64,
    pub control_interval: f64,
}

impl Default for AdvisoryPlanner {
    fn default() -> Self {
        Self {
            accel: 2.0,
            decel: 2.5,
            start_margin: 0.0,
            end_margin: 1.0,
            committed_end_margin: 1.0,
            horizon_cycles: 3,
            queue_discharge: 2.0,
            vmin_factor: 0.3,
            control_interval: 1.0,
        }
    }
}

impl AdvisoryPlanner {
    /// Settings used inside the simulation. The arrival-time model assumes
    /// instant switches between constant accelerations, while a vehicle under
    /// IDM approaches its desired speed asymptotically and runs up to about a
    /// second late; the wider margins absorb that. Modelling a gentler
    /// deceleration than the tracking controller applies keeps slowing
    /// vehicles from arriving early.
    pub fn in_engine() -> Self {
        Self {
            decel: 2.0,
            start_margin: 1.0,
            end_margin: 2.0,
            committed_end_margin: 0.5,
            ..Self::default()
        }
    }

    /// Time to cover `distance` starting at `current` when the vehicle moves
    /// to `target` at constant rate and then cruises. If the distance runs out
    /// before `target` is reached, arrival happens mid-transition.
    pub fn arrival_time(&self, distance: f64, current: f64, target: f64) -> f64 {
        let (vc, v, d) = (current, target, distance);
        if v >= vc {
            let a = self.accel;
            let d_acc = (v * v - vc * vc) / (2.0 * a);
            if d_acc >= d {
                (-vc + (vc * vc + 2.0 * a * d).sqrt()) / a
            } else {
                (v - vc) / a + (d - d_acc) / v
            }
        } else {
            let b = self.decel;
            let d_dec = (vc * vc - v * v) / (2.0 * b);
            if d_dec >= d {
                (vc - (vc * vc - 2.0 * b * d).max(0.0).sqrt()) / b
            } else {
                (vc - v) / b + (d - d_dec) / v
            }
        }
    }

    /// Highest constant speed in `[v_min, v_max]` that reaches the stop bar
    /// inside a green window, or `v_min` when none within the horizon does.
    /// `queue_delay` pushes back the start of the first window.
    pub fn advise(
        &self,
        distance: f64,
        current_speed: f64,
        v_min: f64,
        v_max: f64,
        plan: &SignalPlan,
        now: f64,
        queue_delay: f64,
    ) -> f64 {
        self.replan(distance, current_speed, v_min, v_max, plan, now, queue_delay, None)
    }

    /// [`advise`](Self::advise) for a vehicle whose current advisory is
    /// `previous`.
    #[allow(clippy::too_many_arguments)]
    pub fn replan(
        &self,
        distance: f64,
        current_speed: f64,
        v_min: f64,
        v_max: f64,
        plan: &SignalPlan,
        now: f64,
        queue_delay: f64,
        previous: Option<f64>,
    ) -> f64 {
        let racing = previous.is_some_and(|p| p >= v_max - 1e-9);
        let t_fast = self.arrival_time(distance, current_speed, v_max);
        let t_slow = self.arrival_time(distance, current_speed, v_min);
        let horizon = now + f64::from(self.horizon_cycles) * plan.cycle();
        for (k, w) in plan.green_windows_from(now).enumerate() {
            if w.start > horizon {
                break;
            }
            let mut start = if w.start > now { w.start + self.start_margin } else { w.start };
            if k == 0 {
                start += queue_delay;
            }
            let margin = if k == 0 && racing { self.committed_end_margin } else { self.end_margin };
            let end = w.end - margin;
            if end < start {
                continue;
            }
            let (start, end) = (start - now, end - now);
            if t_slow < start {
                // even the slowest speed is early for this and every later window
                break;
            }
            if t_fast > end {
                continue;
            }
            if t_fast >= start {
                return v_max;
            }
            // t_fast < start <= t_slow: largest v with arrival_time(v) >= start
            let (mut lo, mut hi) = (v_min, v_max);
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if self.arrival_time(distance, current_speed, mid) >= start {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return lo;
        }
        v_min
    }
}

/// Advisory speed with the default planner and no queue correction.
pub fn compute_advisory(
    distance_to_stopbar: f64,
    current_speed: f64,
    v_min: f64,
    v_max: f64,
    plan: &SignalPlan,
    now: f64,
) -> f64 {
    AdvisoryPlanner::default().advise(distance_to_stopbar, current_speed, v_min, v_max, plan, now, 0.0)
}

/// One advisory per automated vehicle in the snapshot.
pub fn issue_advisories(
    snapshot: &SystemSnapshot,
    corridor: &Corridor,
    planner: &AdvisoryPlanner,
) -> Vec<Advisory> {
    let valid_until = snapshot.time + planner.control_interval;
    // queued positions per (direction, lane), ascending
    let mut queues: Vec<Vec<f64>> = Vec::new();
    let key = |d: Direction, lane: usize| 2 * lane + d.index();
    for q in &snapshot.queued {
        let k = key(q.direction, q.lane);
        if queues.len() <= k {
            queues.resize(k + 1, Vec::new());
        }
        queues[k].push(q.position);
    }
    for q in &mut queues {
        q.sort_by(f64::total_cmp);
    }
    snapshot
        .equipped_states
        .iter()
        .map(|s| {
            let limit = corridor.speed_limit_at(s.direction, s.position);
            let next = corridor
                .next_stop_index(s.direction, s.position)
                .map(|k| corridor.chain(s.direction).stops[k]);
            let target = match next {
                None => limit,
                Some(stop) if s.route == Route::LeftAt(stop.intersection) => limit,
                Some(stop) => {
                    let v_max = corridor.links[stop.link].speed_limit;
                    let v_min = planner.vmin_factor * v_max;
                    let distance = stop.position - s.position;
                    if distance <= 0.0 {
                        v_max
                    } else {
                        let ahead = queues.get(key(s.direction, s.lane)).map_or(0, |q| {
                            q.partition_point(|&p| p <= stop.position) - q.partition_point(|&p| p <= s.position)
                        });
                        let plan = &snapshot.signal_states[stop.intersection].plan;
                        planner.replan(
                            distance,
                            s.speed,
                            v_min,
                            v_max,
                            plan,
                            snapshot.time,
                            planner.queue_discharge * ahead as f64,
                            s.advisory,
                        )
                    }
                }
            };
            Advisory {
                vehicle: s.id,
                target_speed: target,
                valid_until,
            }
        })
        .collect()
}

/// Acceleration that tracks an advisory speed, bounded by the vehicle's
/// comfortable limits.
pub fn tracking_accel(target: f64, speed: f64, max_accel: f64, comfortable_decel: f64) -> f64 {
    (3.0 * (target - speed)).clamp(-comfortable_decel, max_accel)
}
