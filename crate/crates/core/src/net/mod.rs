//! Junction topology: lanes, movements, conflicts and the phase program.
//!
//! A [`RoadNetwork`] is always fully validated. The only way to obtain one is
//! through [`load_network`] (or [`RoadNetwork::from_document`]), which means
//! downstream modules can index lanes and connections without re-checking.

mod archetypes;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archetypes::{builtin_archetype, builtin_archetypes, ARCHETYPE_NAMES};

/// 50 km/h.
pub const DEFAULT_SPEED_LIMIT: f64 = 13.89;

/// Distance of each loop detector upstream of the stop line.
pub const DETECTOR_SETBACK: f64 = 10.0;

pub type LaneIdx = usize;
pub type ConnIdx = usize;

fn default_speed_limit() -> f64 {
    DEFAULT_SPEED_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub length: f64,
    #[serde(default)]
    pub entry: bool,
    #[serde(default = "default_speed_limit")]
    pub speed_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: String,
    pub from_lane: String,
    pub to_lane: String,
    pub turn: Turn,
    pub internal_length: f64,
    /// Speed limit on the internal path. Defaults to the slower of the two
    /// lanes it joins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
}

/// Signal meaning for one connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalColor {
    /// `G`: move with priority.
    GreenPriority,
    /// `g`: move without priority (yield to conflicting `G` traffic).
    GreenMinor,
    /// `o`: stop if still possible.
    Orange,
    /// `r`: must stop.
    Red,
}

impl SignalColor {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'G' => Some(Self::GreenPriority),
            'g' => Some(Self::GreenMinor),
            'o' => Some(Self::Orange),
            'r' => Some(Self::Red),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::GreenPriority => 'G',
            Self::GreenMinor => 'g',
            Self::Orange => 'o',
            Self::Red => 'r',
        }
    }

    pub fn is_green(self) -> bool {
        matches!(self, Self::GreenPriority | Self::GreenMinor)
    }
}

/// A full signal assignment, one color per connection in network order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignalState(pub Vec<SignalColor>);

impl SignalState {
    pub fn all(color: SignalColor, connections: usize) -> Self {
        Self(vec![color; connections])
    }

    pub fn parse(state: &str) -> Option<Self> {
        state.chars().map(SignalColor::from_char).collect::<Option<Vec<_>>>().map(Self)
    }

    pub fn get(&self, conn: ConnIdx) -> SignalColor {
        self.0[conn]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for SignalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{}", c.as_char())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseDefinition {
    pub index: usize,
    pub signals: SignalState,
}

impl PhaseDefinition {
    pub fn signal(&self, conn: ConnIdx) -> SignalColor {
        self.signals.get(conn)
    }
}

/// Symmetric, irreflexive conflict relation over connection indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl ConflictMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, cells: vec![false; n * n] }
    }

    /// Panics on `a == b`: a movement never conflicts with itself.
    pub fn set(&mut self, a: ConnIdx, b: ConnIdx) {
        assert_ne!(a, b, "conflict matrix is irreflexive");
        self.cells[a * self.n + b] = true;
        self.cells[b * self.n + a] = true;
    }

    pub fn conflicts(&self, a: ConnIdx, b: ConnIdx) -> bool {
        self.cells[a * self.n + b]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Unordered pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (ConnIdx, ConnIdx)> + '_ {
        (0..self.n).flat_map(move |a| ((a + 1)..self.n).filter(move |&b| self.conflicts(a, b)).map(move |b| (a, b)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub id: String,
    pub lane: String,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDocument {
    pub index: usize,
    /// One of `G g o r` per connection, in the order of `connections`.
    pub state: String,
}

/// On-disk form of a network. See `docs/network-format.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    #[serde(default)]
    pub name: String,
    pub lanes: Vec<Lane>,
    pub connections: Vec<Connection>,
    #[serde(default)]
    pub conflicts: Vec<[String; 2]>,
    pub phases: Vec<PhaseDocument>,
    #[serde(default)]
    pub detectors: Vec<Detector>,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid network: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("at least one phase required")]
    NoPhases,
    #[error("{field}: duplicate id `{id}`")]
    DuplicateId { field: &'static str, id: String },
    #[error("{field}: unknown lane `{lane}`")]
    UnknownLane { field: String, lane: String },
    #[error("{field}: unknown connection `{connection}`")]
    UnknownConnection { field: String, connection: String },
    #[error("{field}: must be > 0 (got {value})")]
    NonPositive { field: String, value: f64 },
    #[error("connections[{index}]: from_lane equals to_lane (`{lane}`)")]
    SelfLoop { index: usize, lane: String },
    #[error("connections[{index}]: to_lane `{lane}` has outgoing connections; only single-junction networks are supported")]
    ChainedConnection { index: usize, lane: String },
    #[error("lanes: entry lane `{lane}` has no outgoing connection")]
    DeadEndEntry { lane: String },
    #[error("conflicts[{index}]: connection `{connection}` conflicts with itself")]
    SelfConflict { index: usize, connection: String },
    #[error("phases[{position}]: index {index} out of sequence (phase indices must be 0..{count} in order)")]
    PhaseIndex { position: usize, index: usize, count: usize },
    #[error("phases[{index}].state: expected {expected} signals, got {got}")]
    PhaseLength { index: usize, expected: usize, got: usize },
    #[error("phases[{index}].state: invalid signal character `{ch}` (allowed: G g o r)")]
    PhaseChar { index: usize, ch: char },
    #[error("phases[{index}]: conflicting connections `{a}` and `{b}` both GreenPriority")]
    ConflictingGreen { index: usize, a: String, b: String },
    #[error("phases[{index}]: `{minor}` is GreenMinor against conflicting GreenPriority `{major}` but is not a left turn")]
    IllegalMinor { index: usize, minor: String, major: String },
    #[error("detectors[{index}]: position {position} outside lane `{lane}` (length {length})")]
    DetectorPosition { index: usize, lane: String, position: f64, length: f64 },
}

/// Validated, indexed junction. Immutable after construction.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub name: String,
    pub lanes: Vec<Lane>,
    pub connections: Vec<Connection>,
    pub conflicts: ConflictMatrix,
    pub phases: Vec<PhaseDefinition>,
    pub detectors: Vec<Detector>,
    lane_ids: BTreeMap<String, LaneIdx>,
    conn_from: Vec<LaneIdx>,
    conn_to: Vec<LaneIdx>,
    conn_speed: Vec<f64>,
    outgoing: Vec<Vec<ConnIdx>>,
    incoming: Vec<Vec<ConnIdx>>,
    conflict_lists: Vec<Vec<ConnIdx>>,
    detector_lanes: Vec<LaneIdx>,
}

/// Parse and validate a JSON network description.
pub fn load_network(text: &str) -> Result<RoadNetwork, NetError> {
    let doc: NetworkDocument =
        serde_json::from_str(text).map_err(|e| NetError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
    Ok(RoadNetwork::from_document(doc)?)
}

/// Conflicting pairs that are simultaneously `GreenPriority` in `signals`.
pub fn check_phase_safety(signals: &SignalState, matrix: &ConflictMatrix) -> Vec<(ConnIdx, ConnIdx)> {
    matrix.pairs().filter(|&(a, b)| signals.get(a) == SignalColor::GreenPriority && signals.get(b) == SignalColor::GreenPriority).collect()
}

fn positive(field: String, value: f64) -> Result<(), ValidationError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ValidationError::NonPositive { field, value })
    }
}

impl RoadNetwork {
    pub fn from_document(doc: NetworkDocument) -> Result<Self, ValidationError> {
        let mut lane_ids = BTreeMap::new();
        for (i, lane) in doc.lanes.iter().enumerate() {
            if lane_ids.insert(lane.id.clone(), i).is_some() {
                return Err(ValidationError::DuplicateId { field: "lanes", id: lane.id.clone() });
            }
            positive(format!("lanes[{i}].length"), lane.length)?;
            positive(format!("lanes[{i}].speed_limit"), lane.speed_limit)?;
        }

        let mut conn_ids = BTreeMap::new();
        let mut conn_from = Vec::with_capacity(doc.connections.len());
        let mut conn_to = Vec::with_capacity(doc.connections.len());
        let mut conn_speed = Vec::with_capacity(doc.connections.len());
        let mut outgoing = vec![Vec::new(); doc.lanes.len()];
        let mut incoming = vec![Vec::new(); doc.lanes.len()];
        for (i, c) in doc.connections.iter().enumerate() {
            if conn_ids.insert(c.id.clone(), i).is_some() {
                return Err(ValidationError::DuplicateId { field: "connections", id: c.id.clone() });
            }
            let lookup = |lane: &str, field: &str| {
                lane_ids
                    .get(lane)
                    .copied()
                    .ok_or_else(|| ValidationError::UnknownLane { field: format!("connections[{i}].{field}"), lane: lane.to_string() })
            };
            let from = lookup(&c.from_lane, "from_lane")?;
            let to = lookup(&c.to_lane, "to_lane")?;
            if from == to {
                return Err(ValidationError::SelfLoop { index: i, lane: c.from_lane.clone() });
            }
            positive(format!("connections[{i}].internal_length"), c.internal_length)?;
            let speed = match c.speed_limit {
                Some(v) => {
                    positive(format!("connections[{i}].speed_limit"), v)?;
                    v
                }
                None => doc.lanes[from].speed_limit.min(doc.lanes[to].speed_limit),
            };
            conn_from.push(from);
            conn_to.push(to);
            conn_speed.push(speed);
            outgoing[from].push(i);
            incoming[to].push(i);
        }
        for (i, &to) in conn_to.iter().enumerate() {
            if !outgoing[to].is_empty() {
                return Err(ValidationError::ChainedConnection { index: i, lane: doc.lanes[to].id.clone() });
            }
        }
        for (i, lane) in doc.lanes.iter().enumerate() {
            if lane.entry && outgoing[i].is_empty() {
                return Err(ValidationError::DeadEndEntry { lane: lane.id.clone() });
            }
        }

        let mut conflicts = ConflictMatrix::new(doc.connections.len());
        for (i, [a, b]) in doc.conflicts.iter().enumerate() {
            let lookup = |id: &String| {
                conn_ids
                    .get(id)
                    .copied()
                    .ok_or_else(|| ValidationError::UnknownConnection { field: format!("conflicts[{i}]"), connection: id.clone() })
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(ValidationError::SelfConflict { index: i, connection: a.clone() });
            }
            conflicts.set(ia, ib);
        }

        if doc.phases.is_empty() {
            return Err(ValidationError::NoPhases);
        }
        let mut phases = Vec::with_capacity(doc.phases.len());
        for (pos, p) in doc.phases.iter().enumerate() {
            if p.index != pos {
                return Err(ValidationError::PhaseIndex { position: pos, index: p.index, count: doc.phases.len() });
            }
            let got = p.state.chars().count();
            if got != doc.connections.len() {
                return Err(ValidationError::PhaseLength { index: pos, expected: doc.connections.len(), got });
            }
            if let Some(ch) = p.state.chars().find(|&c| SignalColor::from_char(c).is_none()) {
                return Err(ValidationError::PhaseChar { index: pos, ch });
            }
            let signals = SignalState::parse(&p.state).expect("characters checked above");
            if let Some(&(a, b)) = check_phase_safety(&signals, &conflicts).first() {
                return Err(ValidationError::ConflictingGreen { index: pos, a: doc.connections[a].id.clone(), b: doc.connections[b].id.clone() });
            }
            for (a, b) in conflicts.pairs() {
                for (minor, major) in [(a, b), (b, a)] {
                    if signals.get(minor) == SignalColor::GreenMinor
                        && signals.get(major) == SignalColor::GreenPriority
                        && doc.connections[minor].turn != Turn::Left
                    {
                        return Err(ValidationError::IllegalMinor {
                            index: pos,
                            minor: doc.connections[minor].id.clone(),
                            major: doc.connections[major].id.clone(),
                        });
                    }
                }
            }
            phases.push(PhaseDefinition { index: pos, signals });
        }

        let mut detector_ids = BTreeSet::new();
        let mut detector_lanes = Vec::with_capacity(doc.detectors.len());
        for (i, d) in doc.detectors.iter().enumerate() {
            if !detector_ids.insert(d.id.clone()) {
                return Err(ValidationError::DuplicateId { field: "detectors", id: d.id.clone() });
            }
            let lane = lane_ids
                .get(&d.lane)
                .copied()
                .ok_or_else(|| ValidationError::UnknownLane { field: format!("detectors[{i}].lane"), lane: d.lane.clone() })?;
            let length = doc.lanes[lane].length;
            if !(0.0..=length).contains(&d.position) {
                return Err(ValidationError::DetectorPosition { index: i, lane: d.lane.clone(), position: d.position, length });
            }
            detector_lanes.push(lane);
        }

        let conflict_lists =
            (0..doc.connections.len()).map(|a| (0..doc.connections.len()).filter(|&b| conflicts.conflicts(a, b)).collect()).collect();

        Ok(Self {
            name: doc.name,
            lanes: doc.lanes,
            connections: doc.connections,
            conflicts,
            phases,
            detectors: doc.detectors,
            lane_ids,
            conn_from,
            conn_to,
            conn_speed,
            outgoing,
            incoming,
            conflict_lists,
            detector_lanes,
        })
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            name: self.name.clone(),
            lanes: self.lanes.clone(),
            connections: self.connections.clone(),
            conflicts: self.conflicts.pairs().map(|(a, b)| [self.connections[a].id.clone(), self.connections[b].id.clone()]).collect(),
            phases: self.phases.iter().map(|p| PhaseDocument { index: p.index, state: p.signals.to_string() }).collect(),
            detectors: self.detectors.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("network documents always serialize")
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn lane_index(&self, id: &str) -> Option<LaneIdx> {
        self.lane_ids.get(id).copied()
    }

    pub fn connection_index(&self, id: &str) -> Option<ConnIdx> {
        self.connections.iter().position(|c| c.id == id)
    }

    pub fn from_lane(&self, conn: ConnIdx) -> LaneIdx {
        self.conn_from[conn]
    }

    pub fn to_lane(&self, conn: ConnIdx) -> LaneIdx {
        self.conn_to[conn]
    }

    pub fn connection_speed(&self, conn: ConnIdx) -> f64 {
        self.conn_speed[conn]
    }

    pub fn outgoing(&self, lane: LaneIdx) -> &[ConnIdx] {
        &self.outgoing[lane]
    }

    pub fn incoming(&self, lane: LaneIdx) -> &[ConnIdx] {
        &self.incoming[lane]
    }

    pub fn conflicting(&self, conn: ConnIdx) -> &[ConnIdx] {
        &self.conflict_lists[conn]
    }

    pub fn detector_lane(&self, detector: usize) -> LaneIdx {
        self.detector_lanes[detector]
    }

    pub fn entry_lanes(&self) -> impl Iterator<Item = LaneIdx> + '_ {
        (0..self.lanes.len()).filter(|&i| self.lanes[i].entry)
    }

    /// Lanes that feed the junction.
    pub fn approach_lanes(&self) -> impl Iterator<Item = LaneIdx> + '_ {
        (0..self.lanes.len()).filter(|&i| !self.outgoing[i].is_empty())
    }

    /// Lanes that leave the junction. Built-in archetypes have one per arm.
    pub fn exit_lanes(&self) -> impl Iterator<Item = LaneIdx> + '_ {
        (0..self.lanes.len()).filter(|&i| self.outgoing[i].is_empty())
    }

    pub fn arm_count(&self) -> usize {
        self.exit_lanes().count()
    }

    /// Approach lanes with at least one green connection in `signals`.
    pub fn served_lanes(&self, signals: &SignalState) -> Vec<LaneIdx> {
        self.approach_lanes().filter(|&l| self.outgoing[l].iter().any(|&c| signals.get(c).is_green())).collect()
    }

    /// Connection id pairs, for human-readable reports.
    pub fn pair_names(&self, pairs: &[(ConnIdx, ConnIdx)]) -> Vec<(String, String)> {
        pairs.iter().map(|&(a, b)| (self.connections[a].id.clone(), self.connections[b].id.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_WAY: &str = r#"{
        "name": "toy",
        "lanes": [
            {"id": "a_in", "length": 100, "entry": true},
            {"id": "b_in", "length": 80, "entry": true},
            {"id": "a_out", "length": 50},
            {"id": "b_out", "length": 50}
        ],
        "connections": [
            {"id": "a_s", "from_lane": "a_in", "to_lane": "b_out", "turn": "straight", "internal_length": 20},
            {"id": "b_l", "from_lane": "b_in", "to_lane": "a_out", "turn": "left", "internal_length": 25}
        ],
        "conflicts": [["a_s", "b_l"]],
        "phases": [
            {"index": 0, "state": "Gg"},
            {"index": 1, "state": "rG"}
        ],
        "detectors": [{"id": "d0", "lane": "a_in", "position": 90}]
    }"#;

    fn with_phases(phases: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(TWO_WAY).unwrap();
        v["phases"] = serde_json::from_str(phases).unwrap();
        v.to_string()
    }

    #[test]
    fn loads_valid_document() {
        let net = load_network(TWO_WAY).unwrap();
        assert_eq!(net.phase_count(), 2);
        assert_eq!(net.entry_lanes().collect::<Vec<_>>(), vec![0, 1]);
        assert!(net.conflicts.conflicts(0, 1));
        assert!(net.conflicts.conflicts(1, 0));
        assert!(!net.conflicts.conflicts(0, 0));
        assert_eq!(net.connection_speed(0), DEFAULT_SPEED_LIMIT);
    }

    #[test]
    fn conflicting_priority_greens_rejected() {
        let err = load_network(&with_phases(r#"[{"index":0,"state":"GG"}]"#)).unwrap_err();
        match err {
            NetError::Invalid(ValidationError::ConflictingGreen { index: 0, a, b }) => {
                assert_eq!((a.as_str(), b.as_str()), ("a_s", "b_l"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_phase_list_rejected() {
        let err = load_network(&with_phases("[]")).unwrap_err();
        assert_eq!(err.to_string(), "invalid network: at least one phase required");
    }

    #[test]
    fn minor_green_only_for_left_turns() {
        let err = load_network(&with_phases(r#"[{"index":0,"state":"gG"}]"#)).unwrap_err();
        assert!(matches!(err, NetError::Invalid(ValidationError::IllegalMinor { .. })), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = load_network("{\n  \"lanes\": [,]\n}").unwrap_err();
        match err {
            NetError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn phase_index_gaps_rejected() {
        let err = load_network(&with_phases(r#"[{"index":0,"state":"rr"},{"index":2,"state":"rr"}]"#)).unwrap_err();
        assert!(matches!(err, NetError::Invalid(ValidationError::PhaseIndex { .. })));
    }

    #[test]
    fn unknown_lane_and_bad_detector_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(TWO_WAY).unwrap();
        v["detectors"][0]["lane"] = "nowhere".into();
        assert!(matches!(load_network(&v.to_string()), Err(NetError::Invalid(ValidationError::UnknownLane { .. }))));
        v["detectors"][0]["lane"] = "a_in".into();
        v["detectors"][0]["position"] = 120.0.into();
        assert!(matches!(load_network(&v.to_string()), Err(NetError::Invalid(ValidationError::DetectorPosition { .. }))));
    }

    #[test]
    fn bad_signal_char_rejected() {
        let err = load_network(&with_phases(r#"[{"index":0,"state":"Gy"}]"#)).unwrap_err();
        assert!(matches!(err, NetError::Invalid(ValidationError::PhaseChar { ch: 'y', .. })));
    }

    #[test]
    fn phase_safety_cases() {
        let net = load_network(TWO_WAY).unwrap();
        let all_red = SignalState::all(SignalColor::Red, 2);
        assert!(check_phase_safety(&all_red, &net.conflicts).is_empty());
        let both = SignalState::parse("GG").unwrap();
        assert_eq!(check_phase_safety(&both, &net.conflicts), vec![(0, 1)]);
        let permissive = SignalState::parse("Gg").unwrap();
        assert!(check_phase_safety(&permissive, &net.conflicts).is_empty());
    }

    #[test]
    fn document_round_trip() {
        let net = load_network(TWO_WAY).unwrap();
        let again = load_network(&net.to_json()).unwrap();
        assert_eq!(net.to_document(), again.to_document());
    }
}
