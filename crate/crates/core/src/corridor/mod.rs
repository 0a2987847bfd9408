//! Arterial geometry: directed link chains, lanes, signalized intersections
//! and jughandle ramps.
//!
//! Positions handed to and returned from [`Corridor`] queries are measured
//! along a travel direction from the start of that direction's first link, so
//! a vehicle keeps a single monotone coordinate over its whole trip.

pub(crate) mod spec;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalPlan;

pub use spec::{CorridorSpec, IntersectionSpec, LinkSpec, StopBarSpec};

pub const MAX_LANES: usize = 5;

const PRINCETON: &str = include_str!("../../corridors/princeton.corridor");
const WOODBRIDGE: &str = include_str!("../../corridors/woodbridge.corridor");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Forward, Direction::Reverse];

    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Forward => f.write_str("forward"),
            Direction::Reverse => f.write_str("reverse"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorridorError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("intersection {0} has left-turn demand but no jughandle and is not flagged through-only")]
    LeftTurnWithoutJughandle(String),
    #[error("cannot reserve {requested} lanes: at most {max} leave a general lane on every link")]
    TooManyReservedLanes { requested: usize, max: usize },
    #[error("position {position} m is outside the {direction} extent [0, {length}] m")]
    OutOfExtent {
        direction: Direction,
        position: f64,
        length: f64,
    },
    #[error("unknown intersection {0}")]
    UnknownIntersection(String),
    #[error("unknown bundled corridor {0:?} (expected princeton or woodbridge)")]
    UnknownBundled(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lane {
    pub index: u8,
    pub reserved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub direction: Direction,
    pub length: f64,
    /// Index 0 is the inner (left-most) lane.
    pub lanes: Vec<Lane>,
    pub speed_limit: f64,
    /// Index into [`Corridor::intersections`]; `None` means the corridor exit.
    pub downstream: Option<usize>,
}

impl Link {
    pub fn reserved_count(&self) -> usize {
        self.lanes.iter().take_while(|l| l.reserved).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JughandleRamp {
    /// Meters upstream of the stop bar where the ramp leaves the right-most lane.
    pub diverge_position: f64,
    pub ramp_length: f64,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub signal: SignalPlan,
    pub jughandle: Option<JughandleRamp>,
    /// Stop-bar position per approach, meters from the start of the approach link.
    pub stopbar_positions: [Option<f64>; 2],
    pub left_turns: bool,
    pub through_only: bool,
}

impl Intersection {
    /// Whether vehicles may be routed to turn left here.
    pub fn serves_left_turns(&self) -> bool {
        self.left_turns && self.jughandle.is_some() && !self.through_only
    }
}

/// A stop bar along one direction chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopBar {
    pub intersection: usize,
    /// Distance from the start of the direction chain.
    pub position: f64,
    pub link: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionChain {
    pub links: Vec<usize>,
    /// Chain coordinate of each link's upstream end.
    pub link_starts: Vec<f64>,
    pub length: f64,
    pub stops: Vec<StopBar>,
    pub lane_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub name: String,
    pub links: Vec<Link>,
    pub intersections: Vec<Intersection>,
    chains: [DirectionChain; 2],
}

impl Corridor {
    pub fn parse(text: &str) -> Result<Self, CorridorError> {
        build_corridor(CorridorSpec::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorridorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorridorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// One of the bundled test beds, `princeton` or `woodbridge`.
    pub fn bundled(name: &str) -> Result<Self, CorridorError> {
        match name {
            "princeton" => Self::parse(PRINCETON),
            "woodbridge" => Self::parse(WOODBRIDGE),
            other => Err(CorridorError::UnknownBundled(other.to_string())),
        }
    }

    /// Loads a bundled corridor by name, or a corridor file by path.
    pub fn resolve(name_or_path: &str) -> Result<Self, CorridorError> {
        match Self::bundled(name_or_path) {
            Err(CorridorError::UnknownBundled(_)) => Self::load(name_or_path),
            other => other,
        }
    }

    pub fn bundled_text(name: &str) -> Option<&'static str> {
        match name {
            "princeton" => Some(PRINCETON),
            "woodbridge" => Some(WOODBRIDGE),
            _ => None,
        }
    }

    pub fn to_spec(&self) -> CorridorSpec {
        CorridorSpec::from_corridor(self)
    }

    pub fn to_text(&self) -> String {
        self.to_spec().to_text()
    }

    pub fn chain(&self, direction: Direction) -> &DirectionChain {
        &self.chains[direction.index()]
    }

    pub fn length(&self, direction: Direction) -> f64 {
        self.chain(direction).length
    }

    pub fn lane_count(&self, direction: Direction) -> usize {
        self.chain(direction).lane_count
    }

    pub fn intersection_index(&self, id: &str) -> Option<usize> {
        self.intersections.iter().position(|i| i.id == id)
    }

    /// Link index covering `position`. Positions at a link boundary belong to
    /// the upstream link.
    pub fn link_at(&self, direction: Direction, position: f64) -> usize {
        let chain = self.chain(direction);
        let k = chain.link_starts.partition_point(|&s| s < position);
        chain.links[k.saturating_sub(1)]
    }

    pub fn speed_limit_at(&self, direction: Direction, position: f64) -> f64 {
        self.links[self.link_at(direction, position)].speed_limit
    }

    /// Lowest speed limit along a direction.
    pub fn min_speed_limit(&self, direction: Direction) -> f64 {
        self.chain(direction)
            .links
            .iter()
            .map(|&l| self.links[l].speed_limit)
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest stop bar at or downstream of `position`, with the distance to it.
    pub fn next_signal(
        &self,
        direction: Direction,
        position: f64,
    ) -> Result<Option<(&Intersection, f64)>, CorridorError> {
        let chain = self.chain(direction);
        if !(0.0..=chain.length).contains(&position) {
            return Err(CorridorError::OutOfExtent {
                direction,
                position,
                length: chain.length,
            });
        }
        Ok(self
            .next_stop_index(direction, position)
            .map(|k| {
                let stop = chain.stops[k];
                (&self.intersections[stop.intersection], stop.position - position)
            }))
    }

    /// Index into the chain's `stops` of the first stop bar at or after `position`.
    pub fn next_stop_index(&self, direction: Direction, position: f64) -> Option<usize> {
        let stops = &self.chain(direction).stops;
        let k = stops.partition_point(|s| s.position < position);
        (k < stops.len()).then_some(k)
    }

    /// Chain coordinate of the jughandle diverge for `intersection` along
    /// `direction`, if the intersection serves left turns from that approach.
    pub fn diverge_position(&self, direction: Direction, intersection: usize) -> Option<f64> {
        let node = &self.intersections[intersection];
        let ramp = node.jughandle.as_ref()?;
        let stop = self
            .chain(direction)
            .stops
            .iter()
            .find(|s| s.intersection == intersection)?;
        Some(stop.position - ramp.diverge_position)
    }

    /// Number of reserved lanes, taken from the first link of the direction.
    pub fn reserved_lanes(&self, direction: Direction) -> usize {
        self.links[self.chain(direction).links[0]].reserved_count()
    }

    pub fn is_reserved(&self, direction: Direction, lane: usize) -> bool {
        lane < self.reserved_lanes(direction)
    }

    /// Fewest lanes over all mainline links.
    pub fn min_lane_count(&self) -> usize {
        self.links.iter().map(|l| l.lanes.len()).min().unwrap_or(0)
    }

    /// Copy of the corridor with every signal showing permanent green.
    pub fn with_all_green(&self) -> Corridor {
        let mut out = self.clone();
        for node in &mut out.intersections {
            node.signal = SignalPlan::always_green(node.signal.cycle());
        }
        out
    }

    /// Copy of the corridor with lanes `0..count` reserved on every link.
    pub fn set_reserved_lanes(&self, count: usize) -> Result<Corridor, CorridorError> {
        let max = self.min_lane_count().saturating_sub(1);
        if count > max {
            return Err(CorridorError::TooManyReservedLanes { requested: count, max });
        }
        let mut out = self.clone();
        for link in &mut out.links {
            for lane in &mut link.lanes {
                lane.reserved = usize::from(lane.index) < count;
            }
        }
        Ok(out)
    }
}

/// Validates a parsed corridor description and derives the direction chains.
pub fn build_corridor(spec: CorridorSpec) -> Result<Corridor, CorridorError> {
    let geometry = |msg: String| Err(CorridorError::InvalidGeometry(msg));

    let mut intersections = Vec::with_capacity(spec.intersection.len());
    for (k, node) in spec.intersection.iter().enumerate() {
        if spec.intersection[..k].iter().any(|n| n.id == node.id) {
            return geometry(format!("duplicate intersection id {}", node.id));
        }
        if let Some(ramp) = &node.jughandle {
            if !(ramp.diverge_position > 0.0) {
                return geometry(format!(
                    "jughandle at {} must diverge upstream of the stop bar",
                    node.id
                ));
            }
            if !(ramp.ramp_length > 0.0) {
                return geometry(format!("jughandle at {} has non-positive ramp length", node.id));
            }
        } else if node.left_turns && !node.through_only {
            return Err(CorridorError::LeftTurnWithoutJughandle(node.id.clone()));
        }
        intersections.push(Intersection {
            id: node.id.clone(),
            signal: node.signal.clone(),
            jughandle: node.jughandle.clone().map(Into::into),
            stopbar_positions: [node.stopbar_positions.forward, node.stopbar_positions.reverse],
            left_turns: node.left_turns,
            through_only: node.through_only,
        });
    }

    let mut links = Vec::with_capacity(spec.link.len());
    for (k, link) in spec.link.iter().enumerate() {
        if spec.link[..k].iter().any(|l| l.id == link.id) {
            return geometry(format!("duplicate link id {}", link.id));
        }
        if !(link.length > 0.0) || !link.length.is_finite() {
            return geometry(format!("link {} has non-positive length {}", link.id, link.length));
        }
        if !(link.speed_limit > 0.0) {
            return geometry(format!("link {} has non-positive speed limit", link.id));
        }
        if link.lanes.is_empty() || link.lanes.len() > MAX_LANES {
            return geometry(format!(
                "link {} has {} lanes (expected 1..={MAX_LANES})",
                link.id,
                link.lanes.len()
            ));
        }
        for (i, lane) in link.lanes.iter().enumerate() {
            if usize::from(lane.index) != i {
                return geometry(format!("link {} lanes must be listed in index order", link.id));
            }
        }
        let reserved = link.lanes.iter().take_while(|l| l.reserved).count();
        if link.lanes[reserved..].iter().any(|l| l.reserved) {
            return geometry(format!(
                "link {} reserved lanes must be a contiguous inner prefix",
                link.id
            ));
        }
        if reserved == link.lanes.len() {
            return geometry(format!("link {} has no general-purpose lane", link.id));
        }
        let downstream = match &link.downstream {
            None => None,
            Some(id) => Some(
                intersections
                    .iter()
                    .position(|n| &n.id == id)
                    .ok_or_else(|| CorridorError::UnknownIntersection(id.clone()))?,
            ),
        };
        links.push(Link {
            id: link.id.clone(),
            direction: link.direction,
            length: link.length,
            lanes: link.lanes.clone(),
            speed_limit: link.speed_limit,
            downstream,
        });
    }

    let chains = [
        build_chain(Direction::Forward, &links, &intersections)?,
        build_chain(Direction::Reverse, &links, &intersections)?,
    ];

    Ok(Corridor {
        name: spec.name,
        links,
        intersections,
        chains,
    })
}

fn build_chain(
    direction: Direction,
    links: &[Link],
    intersections: &[Intersection],
) -> Result<DirectionChain, CorridorError> {
    let geometry = |msg: String| CorridorError::InvalidGeometry(msg);
    let members: Vec<usize> = links
        .iter()
        .enumerate()
        .filter(|(_, l)| l.direction == direction)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(geometry(format!("no links in the {direction} direction")));
    }

    let lane_count = links[members[0]].lanes.len();
    let mut link_starts = Vec::with_capacity(members.len());
    let mut stops = Vec::new();
    let mut cursor = 0.0;
    for (k, &li) in members.iter().enumerate() {
        let link = &links[li];
        if link.lanes.len() != lane_count {
            return Err(geometry(format!(
                "link {} changes the {direction} lane count from {lane_count} to {}",
                link.id,
                link.lanes.len()
            )));
        }
        if link.reserved_count() != links[members[0]].reserved_count() {
            return Err(geometry(format!(
                "link {} has a different reserved-lane count than the rest of the {direction} chain",
                link.id
            )));
        }
        let last = k + 1 == members.len();
        match (link.downstream, last) {
            (None, false) => {
                return Err(geometry(format!(
                    "link {} ends at the corridor exit but is not the last {direction} link",
                    link.id
                )))
            }
            (Some(_), true) => {
                return Err(geometry(format!(
                    "last {direction} link {} must end at the corridor exit",
                    link.id
                )))
            }
            _ => {}
        }
        if let Some(ni) = link.downstream {
            let node = &intersections[ni];
            if stops.iter().any(|s: &StopBar| s.intersection == ni) {
                return Err(geometry(format!(
                    "intersection {} is approached twice in the {direction} direction",
                    node.id
                )));
            }
            let bar = node.stopbar_positions[direction.index()].ok_or_else(|| {
                geometry(format!(
                    "intersection {} has no {direction} stop bar position",
                    node.id
                ))
            })?;
            if !(0.0..=link.length).contains(&bar) {
                return Err(geometry(format!(
                    "intersection {} {direction} stop bar {bar} m lies outside link {}",
                    node.id, link.id
                )));
            }
            if let Some(ramp) = &node.jughandle {
                if ramp.diverge_position > bar {
                    return Err(geometry(format!(
                        "jughandle at {} diverges upstream of link {}",
                        node.id, link.id
                    )));
                }
            }
            stops.push(StopBar {
                intersection: ni,
                position: cursor + bar,
                link: li,
            });
        }
        link_starts.push(cursor);
        cursor += link.length;
    }

    Ok(DirectionChain {
        links: members,
        link_starts,
        length: cursor,
        stops,
        lane_count,
    })
}
