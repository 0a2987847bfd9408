//! Demand levels and vehicle generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DemandOverride, ParamOverrides};
use crate::corridor::{Corridor, Direction};
use crate::dynamics::{DriverParams, Route, Vehicle, VehicleClass};
use crate::reservation::LosClass;

/// Saturation flow per lane, veh/h.
pub const SATURATION_FLOW: f64 = 1900.0;
pub const DEFAULT_LEFT_TURN_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// Mainline entry flow per direction (indexed by `Direction::index`), veh/h.
    pub flows: [f64; 2],
    /// Left-turn fraction per intersection; zero where no jughandle exists.
    pub left_turn_fraction: Vec<f64>,
}

/// Target critical volume-to-capacity ratio for a congestion regime.
pub fn target_vc(los: LosClass) -> f64 {
    match los {
        LosClass::AToC => 0.65,
        LosClass::CToE => 0.95,
    }
}

/// Demand calibrated so the critical approach of each direction runs at the
/// regime's v/c, with capacity `lanes × 1900 × g/C` on the tightest signal.
pub fn demand_for(los: LosClass, corridor: &Corridor) -> DemandProfile {
    let flows = Direction::ALL.map(|dir| {
        let chain = corridor.chain(dir);
        let gc = chain
            .stops
            .iter()
            .map(|s| corridor.intersections[s.intersection].signal.green_ratio())
            .fold(1.0, f64::min);
        target_vc(los) * chain.lane_count as f64 * SATURATION_FLOW * gc
    });
    let left_turn_fraction = corridor
        .intersections
        .iter()
        .map(|n| if n.serves_left_turns() { DEFAULT_LEFT_TURN_FRACTION } else { 0.0 })
        .collect();
    DemandProfile {
        flows,
        left_turn_fraction,
    }
}

impl DemandProfile {
    pub fn with_overrides(mut self, o: &DemandOverride, corridor: &Corridor) -> Self {
        if let Some(f) = o.forward_flow {
            self.flows[Direction::Forward.index()] = f;
        }
        if let Some(f) = o.reverse_flow {
            self.flows[Direction::Reverse.index()] = f;
        }
        if let Some(frac) = o.left_turn_fraction {
            for (i, n) in corridor.intersections.iter().enumerate() {
                self.left_turn_fraction[i] = if n.serves_left_turns() { frac } else { 0.0 };
            }
        }
        self
    }
}

// Stream ids; each direction owns one block.
const STREAM_ARRIVALS: u64 = 0;
const STREAM_CLASS: u64 = 1;
const STREAM_PARAMS: u64 = 2;
const STREAM_ROUTES: u64 = 3;
const STREAM_LANES: u64 = 4;
/// Lane-change tie-breaks; shared by both directions.
pub(crate) const STREAM_LANE_CHANGE: u64 = 100;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent random streams for vehicle generation, one set per direction.
/// Every arrival consumes exactly one draw from each of the class, parameter,
/// route and lane streams, so runs that differ only in `mp` or lane mode see
/// the same arrivals with the same attributes.
#[derive(Debug, Clone)]
pub struct ArrivalStreams {
    arrivals: [ChaCha8Rng; 2],
    class: [ChaCha8Rng; 2],
    params: [ChaCha8Rng; 2],
    routes: [ChaCha8Rng; 2],
    lanes: [ChaCha8Rng; 2],
}

impl ArrivalStreams {
    pub fn new(seed: u64) -> Self {
        let mk = |kind: u64| Direction::ALL.map(|d| stream(seed, 10 * d.index() as u64 + kind));
        Self {
            arrivals: mk(STREAM_ARRIVALS),
            class: mk(STREAM_CLASS),
            params: mk(STREAM_PARAMS),
            routes: mk(STREAM_ROUTES),
            lanes: mk(STREAM_LANES),
        }
    }
}

/// A generated vehicle waiting to enter the mainline.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingVehicle {
    pub vehicle: Vehicle,
    pub generated_at: f64,
}

/// Vehicles arriving during the step starting at `t`. Each direction sees at
/// most one arrival per step, with probability `flow·dt/3600`.
#[allow(clippy::too_many_arguments)]
pub fn generate_arrivals(
    profile: &DemandProfile,
    mp: f64,
    streams: &mut ArrivalStreams,
    corridor: &Corridor,
    t: f64,
    dt: f64,
    next_id: &mut u64,
    overrides: [&ParamOverrides; 2],
) -> Vec<PendingVehicle> {
    let mut out = Vec::new();
    for dir in Direction::ALL {
        let d = dir.index();
        let p = (profile.flows[d] * dt / 3600.0).min(1.0);
        if !(streams.arrivals[d].random::<f64>() < p) {
            continue;
        }
        let u_class: f64 = streams.class[d].random();
        let u_params: f64 = streams.params[d].random();
        let u_route: f64 = streams.routes[d].random();
        let u_lane: f64 = streams.lanes[d].random();

        let class = if u_class < mp { VehicleClass::Automated } else { VehicleClass::Conventional };
        let limit = corridor.speed_limit_at(dir, 0.0);
        let params = match class {
            VehicleClass::Automated => overrides[0].apply(DriverParams::automated(limit)),
            VehicleClass::Conventional => {
                overrides[1].apply(DriverParams::conventional(limit, 0.9 + 0.2 * u_params))
            }
        };
        let route = draw_route(profile, corridor, dir, u_route);
        let lane = entry_lane(corridor, dir, class, u_lane);
        out.push(PendingVehicle {
            vehicle: Vehicle {
                id: *next_id,
                class,
                direction: dir,
                position: 0.0,
                lane,
                speed: 0.0,
                accel: 0.0,
                route,
                advisory: None,
                entry_time: t,
                params,
            },
            generated_at: t,
        });
        *next_id += 1;
    }
    out
}

/// Maps one uniform draw onto the sequence of turn opportunities along the
/// direction: turning at the k-th jughandle has probability
/// `f_k · Π_{j<k} (1 − f_j)`.
fn draw_route(profile: &DemandProfile, corridor: &Corridor, dir: Direction, u: f64) -> Route {
    let mut reach = 1.0;
    let mut cum = 0.0;
    for stop in &corridor.chain(dir).stops {
        let f = profile.left_turn_fraction[stop.intersection];
        if f <= 0.0 || corridor.diverge_position(dir, stop.intersection).is_none() {
            continue;
        }
        cum += reach * f;
        if u < cum {
            return Route::LeftAt(stop.intersection);
        }
        reach *= 1.0 - f;
    }
    Route::Through
}

/// Automated vehicles take the inner-most lane; conventional vehicles a
/// uniformly drawn general lane.
fn entry_lane(corridor: &Corridor, dir: Direction, class: VehicleClass, u: f64) -> usize {
    match class {
        VehicleClass::Automated => 0,
        VehicleClass::Conventional => {
            let reserved = corridor.reserved_lanes(dir);
            let general = corridor.lane_count(dir) - reserved;
            reserved + ((u * general as f64) as usize).min(general - 1)
        }
    }
}
