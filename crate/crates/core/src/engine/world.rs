//! The fixed-step run loop.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ScenarioConfig;
use super::demand::{demand_for, generate_arrivals, stream, ArrivalStreams, DemandProfile, PendingVehicle, STREAM_LANE_CHANGE};
use super::metrics::{AuditCounts, MetricsAccumulator, RunMetrics};
use super::EngineError;
use crate::agent::{collect, issue_advisories, tracking_accel, AdvisoryPlanner, SystemSnapshot};
use crate::corridor::{Corridor, Direction, Lane};
use crate::dynamics::{
    advance, advance_bounded, idm_acceleration, lane_change_decision, mandatory_target, signal_interaction,
    DriverParams, Follower, LaneChange, LaneView, Leader, Neighborhood, Route, SignalApproach, SignalResponse,
    Vehicle, VehicleClass, LANE_CHANGE_COOLDOWN, PANIC_DISTANCE, STOPPED_SPEED, VEHICLE_LENGTH,
};
use crate::reservation::obligations_for;
use crate::signal::PhaseState;

/// Smallest bumper gap the integrator lets a follower close to.
const GUARD_GAP: f64 = 0.05;
/// Lane changes are evaluated for each vehicle once every this many steps,
/// staggered by vehicle id.
const LANE_CHANGE_EVERY: u64 = 5;
/// A vehicle under the panic rule slows down to this speed.
const PANIC_SPEED: f64 = 5.0;
/// Distance from the bar within which a stopped vehicle counts as queue head.
const QUEUE_HEAD_DISTANCE: f64 = 10.0;
const SPEED_TOLERANCE: f64 = 1.1;

#[derive(Debug, Clone)]
struct Agent {
    v: Vehicle,
    generated_at: f64,
    /// Index into the direction's stop bars of the next bar ahead.
    next_stop: usize,
    last_lane_change: f64,
    /// Stop index whose yellow this vehicle committed to clearing.
    yellow_commit: Option<usize>,
    panic: bool,
    /// Position, speed and acceleration at the start of the current step.
    prev: (f64, f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct SignalNow {
    state: PhaseState,
    left: f64,
    time_to_green: f64,
    green_elapsed: Option<f64>,
}

/// Complete simulation state for one scenario run.
#[derive(Debug, Clone)]
pub struct World {
    corridor: Corridor,
    config: ScenarioConfig,
    profile: DemandProfile,
    planner: AdvisoryPlanner,
    reserved: usize,
    step_index: u64,
    control_every: u64,
    agents: Vec<Agent>,
    /// Per direction, per lane: vehicles waiting to enter.
    entry: [Vec<VecDeque<PendingVehicle>>; 2],
    /// Per direction, per lane: agent indices ordered front to back.
    lanes: [Vec<Vec<usize>>; 2],
    /// Index of each agent within its lane list.
    rank: Vec<usize>,
    signals: Vec<SignalNow>,
    streams: ArrivalStreams,
    lc_rng: ChaCha8Rng,
    next_id: u64,
    generated: u64,
    exited: u64,
    metrics: MetricsAccumulator,
    audits: AuditCounts,
}

/// Time within `[0, dt]` at which a vehicle starting at `pos` with `speed`
/// and constant `accel` reaches `target`.
fn crossing_time(pos: f64, speed: f64, accel: f64, target: f64, dt: f64) -> f64 {
    let d = target - pos;
    if d <= 0.0 {
        return 0.0;
    }
    let disc = speed * speed + 2.0 * accel * d;
    if disc < 0.0 {
        return dt;
    }
    let denom = speed + disc.sqrt();
    if denom <= 0.0 {
        return dt;
    }
    (2.0 * d / denom).clamp(0.0, dt)
}

impl World {
    /// Builds the world for `config`, resolving its corridor reference.
    pub fn new(config: &ScenarioConfig) -> Result<Self, EngineError> {
        let corridor = Corridor::resolve(&config.corridor)?;
        Self::with_corridor(corridor, config)
    }

    /// Builds the world on an already loaded corridor; `config.corridor` is
    /// ignored.
    pub fn with_corridor(corridor: Corridor, config: &ScenarioConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let reserved = config.reserved_lane_mode.resolve(config.los, config.mp, &corridor)?;
        let corridor = corridor.set_reserved_lanes(reserved)?;
        let profile = demand_for(config.los, &corridor).with_overrides(&config.demand, &corridor);
        let per_dir = |d: Direction| corridor.lane_count(d);
        let entry = Direction::ALL.map(|d| vec![VecDeque::new(); per_dir(d)]);
        let lanes = Direction::ALL.map(|d| vec![Vec::new(); per_dir(d)]);
        let control_every = (config.agent.control_interval / config.dt).round().max(1.0) as u64;
        let signals = vec![
            SignalNow {
                state: PhaseState::Green,
                left: 0.0,
                time_to_green: 0.0,
                green_elapsed: None
            };
            corridor.intersections.len()
        ];
        Ok(Self {
            profile,
            planner: config.agent,
            reserved,
            step_index: 0,
            control_every,
            agents: Vec::new(),
            rank: Vec::new(),
            entry,
            lanes,
            signals,
            streams: ArrivalStreams::new(config.seed),
            lc_rng: stream(config.seed, STREAM_LANE_CHANGE),
            next_id: 0,
            generated: 0,
            exited: 0,
            metrics: MetricsAccumulator::new(config.warmup, config.duration),
            audits: AuditCounts::default(),
            corridor,
            config: config.clone(),
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt
    }

    pub fn corridor(&self) -> &Corridor {
        &self.corridor
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn demand(&self) -> &DemandProfile {
        &self.profile
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    /// Vehicles on the mainline.
    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.agents.iter().map(|a| &a.v)
    }

    pub fn queued_at_entry(&self) -> usize {
        self.entry.iter().flatten().map(VecDeque::len).sum()
    }

    pub fn generated(&self) -> u64 {
        self.generated
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn audits(&self) -> &AuditCounts {
        &self.audits
    }

    /// What the control agent would see right now.
    pub fn snapshot(&self) -> SystemSnapshot {
        collect(self.time(), &self.corridor, self.vehicles())
    }

    /// Places a vehicle at the start of `direction` in `lane` with the
    /// given speed, bypassing demand generation. Returns its id.
    pub fn spawn(&mut self, direction: Direction, class: VehicleClass, lane: usize, speed: f64, route: Route) -> u64 {
        let limit = self.corridor.speed_limit_at(direction, 0.0);
        let params = match class {
            VehicleClass::Automated => self.config.automated.apply(DriverParams::automated(limit)),
            VehicleClass::Conventional => self.config.conventional.apply(DriverParams::conventional(limit, 1.0)),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.generated += 1;
        let t = self.time();
        self.agents.push(Agent {
            v: Vehicle {
                id,
                class,
                direction,
                position: 0.0,
                lane,
                speed,
                accel: 0.0,
                route,
                advisory: None,
                entry_time: t,
                params,
            },
            generated_at: t,
            next_stop: 0,
            last_lane_change: f64::NEG_INFINITY,
            yellow_commit: None,
            panic: false,
            prev: (0.0, 0.0, 0.0),
        });
        id
    }

    /// Runs the remaining steps and returns the metrics.
    pub fn run_to_end(mut self) -> RunMetrics {
        let total = self.config.total_steps();
        while self.step_index < total {
            self.step();
        }
        self.finish()
    }

    pub fn finish(&self) -> RunMetrics {
        let mut m = self.metrics.finish();
        m.vehicles_generated = self.generated;
        m.vehicles_remaining = self.agents.len() as u64 + self.queued_at_entry() as u64;
        m.reserved_count = self.reserved;
        m.audits = self.audits;
        m
    }

    /// Advances the world by one time step.
    pub fn step(&mut self) {
        let t = self.time();
        let dt = self.config.dt;

        let overrides = [&self.config.automated, &self.config.conventional];
        for p in generate_arrivals(
            &self.profile,
            self.config.mp,
            &mut self.streams,
            &self.corridor,
            t,
            dt,
            &mut self.next_id,
            overrides,
        ) {
            self.generated += 1;
            let (d, l) = (p.vehicle.direction.index(), p.vehicle.lane);
            self.entry[d][l].push_back(p);
        }
        self.rebuild_lanes();
        self.insert_from_entry();
        self.update_signals(t);
        if self.step_index % self.control_every == 0 {
            self.run_agent(t);
        }
        self.lane_changes(t);
        let accels = self.accelerations(t);
        self.advance_all(t, dt, &accels);
        self.transitions(t, dt);

        self.step_index += 1;
        let queued = self.queued_at_entry();
        self.metrics.record_step(self.time(), dt, self.agents.len(), queued);
        if self.generated != self.agents.len() as u64 + queued as u64 + self.exited {
            self.audits.conservation_violations += 1;
        }
    }

    fn rebuild_lanes(&mut self) {
        // nearly sorted already, so this is close to a linear pass
        self.agents.sort_by(|a, b| {
            let (a, b) = (&a.v, &b.v);
            (a.direction.index(), a.lane)
                .cmp(&(b.direction.index(), b.lane))
                .then(b.position.total_cmp(&a.position))
                .then(a.id.cmp(&b.id))
        });
        for lanes in &mut self.lanes {
            for l in lanes.iter_mut() {
                l.clear();
            }
        }
        self.rank.clear();
        for (i, a) in self.agents.iter().enumerate() {
            let list = &mut self.lanes[a.v.direction.index()][a.v.lane];
            self.rank.push(list.len());
            list.push(i);
        }
    }

    fn insert_from_entry(&mut self) {
        for dir in Direction::ALL {
            let d = dir.index();
            for lane in 0..self.entry[d].len() {
                let Some(head) = self.entry[d][lane].front() else {
                    continue;
                };
                let p = head.vehicle.params;
                let last = self.lanes[d][lane].last().map(|&i| &self.agents[i].v);
                let speed = match last {
                    None => p.desired_speed,
                    Some(l) => {
                        let gap = l.position - VEHICLE_LENGTH;
                        let v = p.desired_speed.min(l.speed);
                        if gap < p.min_gap + v * p.headway {
                            continue;
                        }
                        v
                    }
                };
                let mut pending = self.entry[d][lane].pop_front().expect("head exists");
                pending.vehicle.speed = speed;
                pending.vehicle.entry_time = self.time();
                self.rank.push(self.lanes[d][lane].len());
                self.lanes[d][lane].push(self.agents.len());
                self.agents.push(Agent {
                    v: pending.vehicle,
                    generated_at: pending.generated_at,
                    next_stop: 0,
                    last_lane_change: f64::NEG_INFINITY,
                    yellow_commit: None,
                    panic: false,
                    prev: (0.0, 0.0, 0.0),
                });
            }
        }
    }

    fn update_signals(&mut self, t: f64) {
        for (s, n) in self.signals.iter_mut().zip(&self.corridor.intersections) {
            let plan = &n.signal;
            let state = plan.phase_state(t);
            *s = SignalNow {
                state,
                left: plan.time_to_phase_end(t),
                time_to_green: if state.is_green() { 0.0 } else { plan.next_green_window(t).start - t },
                green_elapsed: plan.green_elapsed(t),
            };
        }
    }

    fn run_agent(&mut self, t: f64) {
        let snapshot = collect(t, &self.corridor, self.agents.iter().map(|a| &a.v));
        let advisories = issue_advisories(&snapshot, &self.corridor, &self.planner);
        let mut it = advisories.into_iter();
        for a in self.agents.iter_mut().filter(|a| a.v.class == VehicleClass::Automated) {
            let adv = it.next().expect("one advisory per automated vehicle");
            debug_assert_eq!(adv.vehicle, a.v.id);
            a.v.advisory = Some(adv.target_speed);
        }
    }

    /// The stop bar that constrains agent `i`, if any: its next bar unless it
    /// leaves by that intersection's jughandle first.
    fn relevant_stop(&self, i: usize) -> Option<(usize, f64)> {
        let a = &self.agents[i];
        let stops = &self.corridor.chain(a.v.direction).stops;
        let stop = stops.get(a.next_stop)?;
        if a.v.route == Route::LeftAt(stop.intersection) {
            return None;
        }
        Some((a.next_stop, stop.position))
    }

    /// Index in `list` of the first vehicle not ahead of `v`.
    fn rank(&self, list: &[usize], v: &Vehicle) -> usize {
        list.partition_point(|&j| {
            let o = &self.agents[j].v;
            o.position > v.position || (o.position == v.position && o.id < v.id)
        })
    }

    fn leader_of(&self, i: usize) -> Option<(usize, Leader)> {
        let a = &self.agents[i].v;
        let lane = &self.lanes[a.direction.index()][a.lane];
        let j = *lane.get(self.rank[i].checked_sub(1)?)?;
        let l = &self.agents[j].v;
        Some((
            j,
            Leader {
                gap: l.position - VEHICLE_LENGTH - a.position,
                speed: l.speed,
            },
        ))
    }

    fn signal_response(&self, i: usize, leader: Option<(usize, Leader)>) -> SignalResponse {
        let Some((k, bar)) = self.relevant_stop(i) else {
            return SignalResponse::Proceed;
        };
        let a = &self.agents[i];
        let stop = self.corridor.chain(a.v.direction).stops[k];
        let s = self.signals[stop.intersection];
        let distance = (bar - a.v.position).max(0.0);
        let queue_head = a.v.speed < STOPPED_SPEED
            && distance < QUEUE_HEAD_DISTANCE
            && leader.is_none_or(|(j, _)| self.agents[j].v.position > bar);
        signal_interaction(&SignalApproach {
            class: a.v.class,
            speed: a.v.speed,
            distance,
            state: s.state,
            time_in_phase_left: s.left,
            time_to_green: s.time_to_green,
            green_elapsed: s.green_elapsed,
            queue_head,
            params: a.v.params,
            committed: a.yellow_commit == Some(k),
        })
    }

    fn lane_view(&self, i: usize, lane: usize) -> LaneView {
        let a = &self.agents[i].v;
        let d = a.direction;
        let list = &self.lanes[d.index()][lane];
        let k = self.rank(list, a);
        let leader = k.checked_sub(1).map(|p| {
            let l = &self.agents[list[p]].v;
            Leader {
                gap: l.position - VEHICLE_LENGTH - a.position,
                speed: l.speed,
            }
        });
        let follower = list.get(k).map(|&j| {
            let f = &self.agents[j].v;
            Follower {
                gap: a.position - VEHICLE_LENGTH - f.position,
                speed: f.speed,
                params: f.params,
            }
        });
        LaneView {
            lane: Lane {
                index: lane as u8,
                reserved: self.corridor.is_reserved(d, lane),
            },
            leader,
            follower,
        }
    }

    fn lane_changes(&mut self, t: f64) {
        let mut order = Vec::new();
        for lanes in &self.lanes {
            for l in lanes {
                order.extend(l.iter().copied());
            }
        }
        for i in order {
            let a = &self.agents[i];
            let due = (a.v.id + self.step_index) % LANE_CHANGE_EVERY == 0 || a.panic;
            if !due || t - a.last_lane_change < LANE_CHANGE_COOLDOWN {
                continue;
            }
            let obligations = match obligations_for(&a.v, &self.corridor) {
                Ok(o) => o,
                Err(_) => Vec::new(),
            };
            let dir = a.v.direction;
            let lane = a.v.lane;
            let count = self.corridor.lane_count(dir);
            let leader = self.leader_of(i);
            let signal = self.signal_response(i, leader).leader();
            let nb = Neighborhood {
                current: Lane {
                    index: lane as u8,
                    reserved: self.corridor.is_reserved(dir, lane),
                },
                lane_count: count,
                leader: leader.map(|(_, l)| l),
                signal,
                left: (lane > 0).then(|| self.lane_view(i, lane - 1)),
                right: (lane + 1 < count).then(|| self.lane_view(i, lane + 1)),
            };
            let prefer_left = self.lc_rng.random::<bool>();
            let decision = lane_change_decision(&a.v, &nb, &obligations, prefer_left);
            let target = match decision {
                LaneChange::Stay => None,
                LaneChange::MoveLeft => Some(lane - 1),
                LaneChange::MoveRight => Some(lane + 1),
            };
            let mandatory = mandatory_target(&a.v, &nb, &obligations);
            match target {
                Some(to) => {
                    self.move_lane(i, to);
                    let a = &mut self.agents[i];
                    a.last_lane_change = t;
                    a.panic = false;
                    self.audits.lane_changes += 1;
                }
                None => {
                    self.agents[i].panic = mandatory.is_some_and(|(_, d)| d <= PANIC_DISTANCE);
                }
            }
        }
        for a in &self.agents {
            if a.v.class == VehicleClass::Conventional && self.corridor.is_reserved(a.v.direction, a.v.lane) {
                self.audits.reserved_lane_violations += 1;
            }
        }
    }

    fn move_lane(&mut self, i: usize, to: usize) {
        let (d, from) = (self.agents[i].v.direction.index(), self.agents[i].v.lane);
        let k = self.rank[i];
        self.lanes[d][from].remove(k);
        for &j in &self.lanes[d][from][k..] {
            self.rank[j] -= 1;
        }
        let k = self.rank(&self.lanes[d][to], &self.agents[i].v);
        self.lanes[d][to].insert(k, i);
        for (r, &j) in self.lanes[d][to].iter().enumerate().skip(k) {
            self.rank[j] = r;
        }
        self.agents[i].v.lane = to;
    }

    fn accelerations(&mut self, _t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.agents.len()];
        for i in 0..self.agents.len() {
            let leader = self.leader_of(i);
            let response = self.signal_response(i, leader);
            let a = &self.agents[i];
            let v = &a.v;
            let p = &v.params;
            let mut acc = idm_or_floor(v.speed, leader.map(|(_, l)| l), p);
            match response {
                SignalResponse::Stop(l) => acc = acc.min(idm_or_floor(v.speed, Some(l), p)),
                SignalResponse::HoldSpeed => acc = acc.min(0.0),
                SignalResponse::CommitThroughYellow | SignalResponse::Proceed => {}
            }
            let bound = acc;
            if v.class == VehicleClass::Automated {
                if let Some(target) = v.advisory {
                    acc = acc.min(tracking_accel(target, v.speed, p.max_accel, p.comfortable_decel));
                }
            }
            if a.panic && v.speed > PANIC_SPEED {
                acc = acc.min(-p.comfortable_decel);
            }
            if acc > bound + 1e-12 {
                self.audits.advisory_violations += 1;
            }
            if response == SignalResponse::CommitThroughYellow {
                let k = self.agents[i].next_stop;
                self.agents[i].yellow_commit = Some(k);
            }
            out[i] = acc;
        }
        out
    }

    fn advance_all(&mut self, t: f64, dt: f64, accels: &[f64]) {
        for d in 0..2 {
            for lane in 0..self.lanes[d].len() {
                let mut leader_pos: Option<f64> = None;
                for idx in 0..self.lanes[d][lane].len() {
                    let i = self.lanes[d][lane][idx];
                    let acc = accels[i];
                    let bar = self.relevant_stop(i);
                    let a = &self.agents[i];
                    let (pos, speed) = (a.v.position, a.v.speed);
                    let mut max_disp = f64::INFINITY;
                    let mut leader_bound = false;
                    if let Some(lp) = leader_pos {
                        max_disp = lp - VEHICLE_LENGTH - GUARD_GAP - pos;
                        leader_bound = true;
                    }
                    let mut red_bound = false;
                    if let Some((k, bar)) = bar {
                        let tentative = advance(speed, acc, dt).displacement.min(max_disp.max(0.0));
                        if pos + tentative > bar {
                            let tc = crossing_time(pos, speed, acc, bar, dt);
                            let node = self.corridor.chain(a.v.direction).stops[k].intersection;
                            if self.corridor.intersections[node].signal.phase_state(t + tc) == PhaseState::Red {
                                let limit = (bar - pos - 1e-3).max(0.0);
                                if limit < max_disp {
                                    max_disp = limit;
                                    red_bound = true;
                                    leader_bound = false;
                                }
                            }
                        }
                    }
                    let (applied, step) = advance_bounded(speed, acc, dt, max_disp);
                    if applied != acc {
                        if red_bound {
                            self.audits.red_guard_activations += 1;
                        } else if leader_bound {
                            self.audits.leader_guard_activations += 1;
                        }
                    }
                    let a = &mut self.agents[i];
                    a.prev = (pos, speed, applied);
                    let limit = self.corridor.speed_limit_at(a.v.direction, a.v.position.min(self.corridor.length(a.v.direction)));
                    let v_cap = SPEED_TOLERANCE * limit;
                    if step.displacement > v_cap * dt + 0.5 * a.v.params.max_accel * dt * dt + 1e-9 {
                        self.audits.teleport_violations += 1;
                    }
                    a.v.position += step.displacement;
                    a.v.speed = step.speed;
                    a.v.accel = applied;
                    if !(a.v.speed >= 0.0 && a.v.speed <= v_cap + 1e-9) {
                        self.audits.speed_violations += 1;
                    }
                    if let Some(lp) = leader_pos {
                        if lp - VEHICLE_LENGTH - a.v.position <= 0.0 {
                            self.audits.collisions += 1;
                        }
                    }
                    leader_pos = Some(a.v.position);
                }
            }
        }
    }

    fn transitions(&mut self, t: f64, dt: f64) {
        let mut exits: Vec<(usize, f64, f64)> = Vec::new();
        for i in 0..self.agents.len() {
            let dir = self.agents[i].v.direction;
            let chain = self.corridor.chain(dir);
            let a = &self.agents[i];
            let (pos0, speed0, acc) = a.prev;

            let mut next_stop = a.next_stop;
            let mut crossed = false;
            while let Some(stop) = chain.stops.get(next_stop) {
                if a.v.position <= stop.position {
                    break;
                }
                let tc = crossing_time(pos0, speed0, acc, stop.position, dt);
                let signal = &self.corridor.intersections[stop.intersection].signal;
                if a.v.route != Route::LeftAt(stop.intersection) && signal.phase_state(t + tc) == PhaseState::Red {
                    self.audits.red_light_violations += 1;
                }
                next_stop += 1;
                crossed = true;
            }
            let mut exit: Option<f64> = None;
            let mut route = a.v.route;
            if let Route::LeftAt(node) = route {
                if let Some(div) = self.corridor.diverge_position(dir, node) {
                    if a.v.position >= div {
                        if a.v.lane + 1 == chain.lane_count {
                            exit = Some(div);
                        } else {
                            route = Route::Through;
                            self.audits.missed_turns += 1;
                        }
                    }
                }
            }
            if exit.is_none() && a.v.position >= chain.length {
                exit = Some(chain.length);
            }
            let a = &mut self.agents[i];
            a.next_stop = next_stop;
            a.v.route = route;
            if crossed {
                a.yellow_commit = None;
            }
            if let Some(path) = exit {
                let tc = crossing_time(pos0, speed0, acc, path, dt);
                exits.push((i, t + tc, path));
            }
        }
        if exits.is_empty() {
            return;
        }
        let t_end = t + dt;
        for &(i, t_exit, path) in &exits {
            let a = &self.agents[i];
            let delay = (t_exit - a.generated_at) - path / a.v.params.desired_speed;
            if delay < -1.0 {
                self.audits.negative_delays += 1;
            }
            self.metrics.record_exit(t_end, delay);
            self.exited += 1;
        }
        let mut gone = vec![false; self.agents.len()];
        for &(i, _, _) in &exits {
            gone[i] = true;
        }
        let mut k = 0;
        self.agents.retain(|_| {
            let keep = !gone[k];
            k += 1;
            keep
        });
    }
}

fn idm_or_floor(speed: f64, leader: Option<Leader>, p: &DriverParams) -> f64 {
    idm_acceleration(speed, leader, p).unwrap_or(-crate::dynamics::EMERGENCY_DECEL)
}
