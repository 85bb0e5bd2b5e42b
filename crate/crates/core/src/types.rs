//! Shared domain vocabulary: lanes, phases, intersections, vehicles and
//! networks of intersections.
//!
//! Every type here is immutable once validated and can be shared freely
//! across threads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entering direction of an approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    W,
    E,
    N,
    S,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::W, Approach::E, Approach::N, Approach::S];

    /// Side of the intersection a vehicle leaves through after making `movement`.
    ///
    /// A vehicle entering from the west travels east, so a through movement
    /// exits on the east side, a left turn on the north side.
    pub fn exit_side(self, movement: Movement) -> Approach {
        use Approach::*;
        use Movement::*;
        match (self, movement) {
            (W, T) => E,
            (W, L) => N,
            (W, R) => S,
            (E, T) => W,
            (E, L) => S,
            (E, R) => N,
            (N, T) => S,
            (N, L) => E,
            (N, R) => W,
            (S, T) => N,
            (S, L) => W,
            (S, R) => E,
        }
    }

    pub fn opposite(self) -> Approach {
        match self {
            Approach::W => Approach::E,
            Approach::E => Approach::W,
            Approach::N => Approach::S,
            Approach::S => Approach::N,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'W' => Some(Approach::W),
            'E' => Some(Approach::E),
            'N' => Some(Approach::N),
            'S' => Some(Approach::S),
            _ => None,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Approach::W => 'W',
            Approach::E => 'E',
            Approach::N => 'N',
            Approach::S => 'S',
        };
        write!(f, "{c}")
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Approach::from_char), chars.next()) {
            (Some(a), None) => Ok(a),
            _ => Err(format!("unknown approach `{s}` (expected W, E, N or S)")),
        }
    }
}

/// Turning movement served by a lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Movement {
    L,
    T,
    R,
}

impl Movement {
    fn from_char(c: char) -> Option<Self> {
        match c {
            'L' => Some(Movement::L),
            'T' => Some(Movement::T),
            'R' => Some(Movement::R),
            _ => None,
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Movement::L => 'L',
            Movement::T => 'T',
            Movement::R => 'R',
        };
        write!(f, "{c}")
    }
}

impl FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Movement::from_char), chars.next()) {
            (Some(m), None) => Ok(m),
            _ => Err(format!("unknown movement `{s}` (expected L, T or R)")),
        }
    }
}

/// One approaching lane: one lane per movement per approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneId {
    pub intersection: usize,
    pub approach: Approach,
    pub movement: Movement,
}

impl LaneId {
    pub fn new(intersection: usize, approach: Approach, movement: Movement) -> Self {
        LaneId {
            intersection,
            approach,
            movement,
        }
    }

    /// Two-letter code such as `WT`, without the intersection index.
    pub fn code(&self) -> String {
        format!("{}{}", self.approach, self.movement)
    }

    /// Parses a two-letter lane code (`WT`, `NL`, ...) at a given intersection.
    pub fn parse_code(intersection: usize, code: &str) -> Result<Self, String> {
        let code = code.trim();
        let mut chars = code.chars();
        let approach = chars.next().and_then(Approach::from_char);
        let movement = chars.next().and_then(Movement::from_char);
        match (approach, movement, chars.next()) {
            (Some(a), Some(m), None) => Ok(LaneId::new(intersection, a, m)),
            _ => Err(format!("malformed lane code `{code}`")),
        }
    }
}

/// Renders as `intersection:code`, e.g. `2:WT`.
impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.intersection, self.approach, self.movement)
    }
}

impl FromStr for LaneId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (idx, code) = s
            .split_once(':')
            .ok_or_else(|| format!("malformed lane id `{s}` (expected `index:code`)"))?;
        let intersection = idx
            .trim()
            .parse()
            .map_err(|_| format!("bad intersection index in `{s}`"))?;
        LaneId::parse_code(intersection, code)
    }
}

/// A set of lanes that receive green together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseDefinition {
    pub label: String,
    pub green_lanes: Vec<LaneId>,
}

impl PhaseDefinition {
    pub fn new(label: impl Into<String>, mut green_lanes: Vec<LaneId>) -> Self {
        green_lanes.sort();
        green_lanes.dedup();
        PhaseDefinition {
            label: label.into(),
            green_lanes,
        }
    }

    /// Builds a phase from lane codes, labelled `A1B1-A2B2-...`.
    pub fn from_codes(intersection: usize, codes: &[&str]) -> Result<Self> {
        let lanes = codes
            .iter()
            .map(|c| LaneId::parse_code(intersection, c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::config("phase lanes", e))?;
        Ok(PhaseDefinition::new(codes.join("-"), lanes))
    }

    pub fn serves(&self, lane: &LaneId) -> bool {
        self.green_lanes.binary_search(lane).is_ok()
    }
}

/// Static geometry and signal timing of one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionConfig {
    pub lanes: Vec<LaneId>,
    pub phases: Vec<PhaseDefinition>,
    pub road_length_m: f64,
    pub free_flow_speed_mps: f64,
    /// Seconds per vehicle at saturation flow.
    pub saturation_headway_s: f64,
    pub yellow_s: u32,
    pub all_red_s: u32,
    pub min_green_s: u32,
}

impl IntersectionConfig {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn lane_index(&self, lane: &LaneId) -> Option<usize> {
        self.lanes.iter().position(|l| l == lane)
    }

    /// Non-green time between two greens.
    pub fn transition_s(&self) -> u32 {
        self.yellow_s + self.all_red_s
    }

    /// Free-flow traversal time l/μ in whole simulation steps (rounded up).
    pub fn free_flow_steps(&self) -> u64 {
        let raw = self.road_length_m / self.free_flow_speed_mps;
        (raw - 1e-9).ceil().max(0.0) as u64
    }

    /// Saturation flow u_sat in vehicles/hour.
    pub fn saturation_flow_vph(&self) -> f64 {
        3600.0 / self.saturation_headway_s
    }

    /// Per-lane flags: does phase `phase` give lane j green?
    pub fn green_mask(&self, phase: usize) -> Vec<bool> {
        let p = &self.phases[phase];
        self.lanes.iter().map(|l| p.serves(l)).collect()
    }

    /// Copy of this configuration with every lane rebound to `intersection`.
    pub fn at_intersection(&self, intersection: usize) -> IntersectionConfig {
        let rebind = |l: &LaneId| LaneId { intersection, ..*l };
        IntersectionConfig {
            lanes: self.lanes.iter().map(rebind).collect(),
            phases: self
                .phases
                .iter()
                .map(|p| PhaseDefinition::new(p.label.clone(), p.green_lanes.iter().map(rebind).collect()))
                .collect(),
            ..self.clone()
        }
    }

    /// Checks every static invariant, reporting the first one violated.
    pub fn validate(&self) -> Result<()> {
        if self.phases.len() < 2 {
            return Err(Error::config(
                "phase_count>=2",
                format!("{} phase(s) configured", self.phases.len()),
            ));
        }
        if self.lanes.is_empty() {
            return Err(Error::config("lanes_nonempty", "no lanes configured"));
        }
        if !(self.road_length_m > 0.0 && self.road_length_m.is_finite()) {
            return Err(Error::config(
                "road_length_m>0",
                format!("road_length_m = {}", self.road_length_m),
            ));
        }
        if !(self.free_flow_speed_mps > 0.0 && self.free_flow_speed_mps.is_finite()) {
            return Err(Error::config(
                "free_flow_speed_mps>0",
                format!("free_flow_speed_mps = {}", self.free_flow_speed_mps),
            ));
        }
        if !(self.saturation_headway_s > 0.0 && self.saturation_headway_s.is_finite()) {
            return Err(Error::config(
                "saturation_headway_s>0",
                format!("saturation_headway_s = {}", self.saturation_headway_s),
            ));
        }
        if self.min_green_s < 1 {
            return Err(Error::config("min_green_s>=1", "min_green_s = 0"));
        }
        let mut seen = self.lanes.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("lanes_unique", "a lane is listed twice"));
        }
        let owner = self.lanes[0].intersection;
        if let Some(l) = self.lanes.iter().find(|l| l.intersection != owner) {
            return Err(Error::config(
                "lanes_same_intersection",
                format!("lane {l} does not belong to intersection {owner}"),
            ));
        }
        for p in &self.phases {
            if p.green_lanes.is_empty() {
                return Err(Error::config(
                    "phase_green_nonempty",
                    format!("phase `{}` has no green lanes", p.label),
                ));
            }
            if let Some(l) = p.green_lanes.iter().find(|l| self.lane_index(l).is_none()) {
                return Err(Error::config(
                    "phase_lanes_exist",
                    format!("phase `{}` references unknown lane {l}", p.label),
                ));
            }
        }
        if let Some(l) = self.lanes.iter().find(|l| !self.phases.iter().any(|p| p.serves(l))) {
            return Err(Error::config(
                "lane_served_by_some_phase",
                format!("lane {l} is never green"),
            ));
        }
        Ok(())
    }
}

/// Standard four-way intersection with one lane per movement per approach.
///
/// Two phases serve through movements only (`WT-ET`, `NT-ST`); four phases
/// add the protected lefts (`WL-EL`, `NL-SL`).
pub fn build_standard_intersection(phase_count: usize) -> Result<IntersectionConfig> {
    use Approach::*;
    use Movement::*;
    let lane = |a, m| LaneId::new(0, a, m);
    let (lanes, phases) = match phase_count {
        2 => (
            vec![lane(W, T), lane(E, T), lane(N, T), lane(S, T)],
            vec![
                PhaseDefinition::from_codes(0, &["WT", "ET"])?,
                PhaseDefinition::from_codes(0, &["NT", "ST"])?,
            ],
        ),
        4 => (
            vec![
                lane(W, T),
                lane(E, T),
                lane(N, T),
                lane(S, T),
                lane(W, L),
                lane(E, L),
                lane(N, L),
                lane(S, L),
            ],
            vec![
                PhaseDefinition::from_codes(0, &["WT", "ET"])?,
                PhaseDefinition::from_codes(0, &["NT", "ST"])?,
                PhaseDefinition::from_codes(0, &["WL", "EL"])?,
                PhaseDefinition::from_codes(0, &["NL", "SL"])?,
            ],
        ),
        k => {
            return Err(Error::config(
                "phase_count_in{2,4}",
                format!("no standard layout for {k} phases"),
            ))
        }
    };
    let config = IntersectionConfig {
        lanes,
        phases,
        road_length_m: 300.0,
        free_flow_speed_mps: 10.0,
        saturation_headway_s: 2.0,
        yellow_s: 3,
        all_red_s: 2,
        min_green_s: 5,
    };
    config.validate()?;
    Ok(config)
}

/// A vehicle's demand record: when it enters and which lane it uses at each
/// intersection on its way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vehicle {
    pub id: u64,
    pub entry_time_s: u64,
    pub route: Vec<LaneId>,
}

/// Directed connection: vehicles leaving `from` through side `exit` enter
/// `to` on approach `entry`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub from: usize,
    pub exit: Approach,
    pub to: usize,
    pub entry: Approach,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub intersections: Vec<IntersectionConfig>,
    pub links: Vec<Link>,
    pub link_travel_time_s: u64,
}

impl NetworkConfig {
    pub fn single(config: IntersectionConfig) -> Self {
        let link_travel_time_s = config.free_flow_steps();
        NetworkConfig {
            intersections: vec![config.at_intersection(0)],
            links: Vec::new(),
            link_travel_time_s,
        }
    }

    /// Where a vehicle on `lane` goes once it clears the stop line.
    pub fn next_hop(&self, lane: &LaneId) -> Option<&Link> {
        let exit = lane.approach.exit_side(lane.movement);
        self.links
            .iter()
            .find(|l| l.from == lane.intersection && l.exit == exit)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intersections.is_empty() {
            return Err(Error::config("intersections_nonempty", "network has no intersections"));
        }
        for (i, c) in self.intersections.iter().enumerate() {
            c.validate()?;
            if c.lanes[0].intersection != i {
                return Err(Error::config(
                    "lane_intersection_index",
                    format!("intersection {i} owns lanes tagged {}", c.lanes[0].intersection),
                ));
            }
        }
        let n = self.intersections.len();
        for l in &self.links {
            if l.from >= n || l.to >= n {
                return Err(Error::config(
                    "links_reference_intersections",
                    format!("link {} -> {} with {n} intersections", l.from, l.to),
                ));
            }
            if l.from == l.to {
                return Err(Error::config("no_self_loops", format!("link {} -> {}", l.from, l.to)));
            }
        }
        for (i, a) in self.links.iter().enumerate() {
            if self.links[..i].iter().any(|b| b.from == a.from && b.exit == a.exit) {
                return Err(Error::config(
                    "link_exit_unique",
                    format!("intersection {} has two links leaving {}", a.from, a.exit),
                ));
            }
        }
        if !self.links.is_empty() && self.link_travel_time_s == 0 {
            return Err(Error::config("link_travel_time_s>=1", "zero link travel time"));
        }
        Ok(())
    }

    /// Checks that every lane of `route` exists and that consecutive lanes
    /// are connected by a link into the matching approach.
    pub fn validate_route(&self, route: &[LaneId]) -> std::result::Result<(), String> {
        if route.is_empty() {
            return Err("empty route".into());
        }
        for lane in route {
            let known = self
                .intersections
                .get(lane.intersection)
                .map(|c| c.lane_index(lane).is_some())
                .unwrap_or(false);
            if !known {
                return Err(format!("unknown lane {lane}"));
            }
        }
        for pair in route.windows(2) {
            match self.next_hop(&pair[0]) {
                Some(link) if link.to == pair[1].intersection && link.entry == pair[1].approach => {}
                _ => return Err(format!("no link from {} to {}", pair[0], pair[1])),
            }
        }
        Ok(())
    }

    /// Continues a route from `lane` by going straight through each
    /// downstream intersection until the vehicle leaves the network.
    pub fn straight_route(&self, lane: LaneId) -> Vec<LaneId> {
        let mut route = vec![lane];
        let mut current = lane;
        while let Some(link) = self.next_hop(&current) {
            let next = LaneId::new(link.to, link.entry, Movement::T);
            if self.intersections[link.to].lane_index(&next).is_none() || route.len() > self.intersections.len() {
                break;
            }
            route.push(next);
            current = next;
        }
        route
    }
}

/// Grid of `rows × cols` copies of `base`. Intersection (r, c) has index
/// `r * cols + c`; row 0 is the northern edge.
pub fn build_grid_network(rows: usize, cols: usize, base: &IntersectionConfig) -> Result<NetworkConfig> {
    if rows == 0 || cols == 0 {
        return Err(Error::config("grid_dims>=1", format!("{rows}x{cols} grid")));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let intersections = (0..rows * cols).map(|i| base.at_intersection(i)).collect();
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                links.push(Link {
                    from: idx(r, c),
                    exit: Approach::E,
                    to: idx(r, c + 1),
                    entry: Approach::W,
                });
                links.push(Link {
                    from: idx(r, c + 1),
                    exit: Approach::W,
                    to: idx(r, c),
                    entry: Approach::E,
                });
            }
            if r + 1 < rows {
                links.push(Link {
                    from: idx(r, c),
                    exit: Approach::S,
                    to: idx(r + 1, c),
                    entry: Approach::N,
                });
                links.push(Link {
                    from: idx(r + 1, c),
                    exit: Approach::N,
                    to: idx(r, c),
                    entry: Approach::S,
                });
            }
        }
    }
    let network = NetworkConfig {
        intersections,
        links,
        link_travel_time_s: base.free_flow_steps(),
    };
    network.validate()?;
    Ok(network)
}
