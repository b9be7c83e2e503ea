//! Built-in junction archetypes.
//!
//! Each archetype is described by its arms (compass angle, stop-line setback,
//! lane lengths and the movements each approach lane carries) and its phase
//! table. Internal path lengths, turn speeds and the conflict matrix are
//! derived from that geometry:
//!
//! * ports sit on the stop line of each arm, inbound lanes on the left of the
//!   outward arm direction, outbound on the right (right-hand traffic);
//! * two movements cross iff their port chords interleave around the
//!   junction, and merge iff they share an exit lane;
//! * internal paths are circular arcs between the two ports; turn speed is
//!   `sqrt(LATERAL_ACCEL * radius)`, capped at the lane speed limit.
//!
//! The phase tables are hand-written stand-ins for real signal programs.

use std::f64::consts::PI;

use super::{Connection, Detector, Lane, NetworkDocument, PhaseDocument, RoadNetwork, Turn, DEFAULT_SPEED_LIMIT, DETECTOR_SETBACK};

pub const ARCHETYPE_NAMES: [&str; 4] = ["three_arm_4phase", "three_arm_6phase", "four_arm_8phase_regular", "four_arm_8phase_irregular"];

const LANE_WIDTH: f64 = 3.2;
const LATERAL_ACCEL: f64 = 2.5;

struct Approach {
    suffix: &'static str,
    length: f64,
    moves: Vec<(Turn, &'static str)>,
}

struct Arm {
    name: &'static str,
    angle_deg: f64,
    setback: f64,
    exit_length: f64,
    approaches: Vec<Approach>,
}

struct JunctionSpec {
    name: &'static str,
    arms: Vec<Arm>,
    /// Green connections per phase; everything else is red.
    phases: &'static [&'static [(&'static str, char)]],
}

use Turn::{Left as L, Right as R, Straight as S};

fn approach(suffix: &'static str, length: f64, moves: &[(Turn, &'static str)]) -> Approach {
    Approach { suffix, length, moves: moves.to_vec() }
}

fn arm(name: &'static str, angle_deg: f64, setback: f64, exit_length: f64, approaches: Vec<Approach>) -> Arm {
    Arm { name, angle_deg, setback, exit_length, approaches }
}

const THREE_ARM_4: &[&[(&str, char)]] = &[
    &[("W_T", 'G'), ("W_R", 'G'), ("E_T", 'G'), ("E_L", 'g')],
    &[("E_T", 'G'), ("E_L", 'G'), ("S_R", 'G')],
    &[("S_L", 'G'), ("S_R", 'G')],
    &[("W_R", 'G'), ("E_T", 'G'), ("S_R", 'G')],
];

const THREE_ARM_6: &[&[(&str, char)]] = &[
    &[("W_T", 'G'), ("W_R", 'G'), ("E_T", 'G'), ("E_L", 'g')],
    &[("E_T", 'G'), ("E_L", 'G'), ("S_R", 'G')],
    &[("S_L", 'G'), ("S_R", 'G')],
    &[("W_R", 'G'), ("E_T", 'G'), ("S_R", 'G')],
    &[("W_T", 'G'), ("W_R", 'G')],
    &[("E_L", 'G'), ("S_R", 'G')],
];

const FOUR_ARM_8: &[&[(&str, char)]] = &[
    &[("N_T", 'G'), ("N_R", 'G'), ("S_T", 'G'), ("S_R", 'G'), ("N_L", 'g'), ("S_L", 'g')],
    &[("N_L", 'G'), ("S_L", 'G')],
    &[("E_T", 'G'), ("E_R", 'G'), ("W_T", 'G'), ("W_R", 'G'), ("E_L", 'g'), ("W_L", 'g')],
    &[("E_L", 'G'), ("W_L", 'G')],
    &[("N_T", 'G'), ("N_R", 'G'), ("N_L", 'G')],
    &[("S_T", 'G'), ("S_R", 'G'), ("S_L", 'G')],
    &[("E_T", 'G'), ("E_R", 'G'), ("E_L", 'G')],
    &[("W_T", 'G'), ("W_R", 'G'), ("W_L", 'G')],
];

/// Left-turn pocket plus a shared straight/right lane. Leftmost lane first
/// (closest to the centre line).
fn four_arm_lanes(straight: &'static str, right: &'static str, left: &'static str, t_len: f64, l_len: f64) -> Vec<Approach> {
    vec![approach("L", l_len, &[(L, left)]), approach("T", t_len, &[(S, straight), (R, right)])]
}

fn shared_lane(straight: &'static str, right: &'static str, left: &'static str, len: f64) -> Vec<Approach> {
    vec![approach("", len, &[(L, left), (S, straight), (R, right)])]
}

fn spec(name: &str) -> Option<JunctionSpec> {
    let spec = match name {
        "three_arm_4phase" => JunctionSpec {
            name: "three_arm_4phase",
            arms: vec![
                arm("W", 180.0, 12.0, 120.0, vec![approach("", 160.0, &[(S, "E"), (R, "S")])]),
                arm("E", 0.0, 12.0, 120.0, vec![approach("L", 160.0, &[(L, "S")]), approach("T", 160.0, &[(S, "W")])]),
                arm("S", 270.0, 12.0, 120.0, vec![approach("", 160.0, &[(L, "W"), (R, "E")])]),
            ],
            phases: THREE_ARM_4,
        },
        "three_arm_6phase" => JunctionSpec {
            name: "three_arm_6phase",
            arms: vec![
                arm("W", 180.0, 13.0, 110.0, vec![approach("", 140.0, &[(S, "E"), (R, "S")])]),
                arm("E", 0.0, 13.0, 110.0, vec![approach("L", 140.0, &[(L, "S")]), approach("T", 140.0, &[(S, "W")])]),
                arm("S", 270.0, 13.0, 110.0, vec![approach("L", 140.0, &[(L, "W")]), approach("R", 140.0, &[(R, "E")])]),
            ],
            phases: THREE_ARM_6,
        },
        "four_arm_8phase_regular" => JunctionSpec {
            name: "four_arm_8phase_regular",
            arms: vec![
                arm("E", 0.0, 14.0, 120.0, four_arm_lanes("W", "N", "S", 150.0, 150.0)),
                arm("N", 90.0, 14.0, 120.0, four_arm_lanes("S", "W", "E", 150.0, 150.0)),
                arm("W", 180.0, 14.0, 120.0, four_arm_lanes("E", "S", "N", 150.0, 150.0)),
                arm("S", 270.0, 14.0, 120.0, four_arm_lanes("N", "E", "W", 150.0, 150.0)),
            ],
            phases: FOUR_ARM_8,
        },
        // Skewed arms and uneven setbacks. Only E keeps a left-turn pocket;
        // on the other three arms every movement shares a single lane.
        "four_arm_8phase_irregular" => JunctionSpec {
            name: "four_arm_8phase_irregular",
            arms: vec![
                arm("E", 12.0, 24.0, 90.0, four_arm_lanes("W", "N", "S", 230.0, 42.0)),
                arm("N", 72.0, 11.0, 140.0, shared_lane("S", "W", "E", 95.0)),
                arm("W", 205.0, 19.0, 75.0, shared_lane("E", "S", "N", 310.0)),
                arm("S", 262.0, 27.0, 110.0, shared_lane("N", "E", "W", 135.0)),
            ],
            phases: FOUR_ARM_8,
        },
        _ => return None,
    };
    Some(spec)
}

#[derive(Clone, Copy)]
struct Port {
    x: f64,
    y: f64,
}

impl Port {
    fn angle(self) -> f64 {
        self.y.atan2(self.x).rem_euclid(2.0 * PI)
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn direction(angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.to_radians();
    (a.cos(), a.sin())
}

/// Port on the stop line of `arm`; `offset` is in lane widths along the
/// right-hand normal of the outward direction (positive = outbound side).
fn port(arm: &Arm, offset: f64) -> Port {
    let (ux, uy) = direction(arm.angle_deg);
    let (nx, ny) = (uy, -ux);
    Port { x: arm.setback * ux + offset * LANE_WIDTH * nx, y: arm.setback * uy + offset * LANE_WIDTH * ny }
}

/// Arc length and curve radius between two ports given entry/exit headings.
fn arc(from: Port, to: Port, heading_in: (f64, f64), heading_out: (f64, f64)) -> (f64, f64) {
    let chord = ((to.x - from.x).powi(2) + (to.y - from.y).powi(2)).sqrt();
    let cos = (heading_in.0 * heading_out.0 + heading_in.1 * heading_out.1).clamp(-1.0, 1.0);
    let deflection = cos.acos();
    if deflection < 0.05 {
        (chord, f64::INFINITY)
    } else {
        let radius = chord / (2.0 * (deflection / 2.0).sin());
        (radius * deflection, radius)
    }
}

fn chords_cross(a: (f64, f64), b: (f64, f64)) -> bool {
    let (lo, hi) = if a.0 < a.1 { (a.0, a.1) } else { (a.1, a.0) };
    let inside = |x: f64| x > lo && x < hi;
    inside(b.0) != inside(b.1)
}

fn build(spec: &JunctionSpec) -> RoadNetwork {
    let mut lanes = Vec::new();
    let mut detectors = Vec::new();
    let mut connections = Vec::new();
    // (in-port angle, out-port angle, from lane id, to lane id) per connection.
    let mut chords = Vec::new();

    let arm_by_name = |n: &str| spec.arms.iter().find(|a| a.name == n).expect("archetype arm names are consistent");

    for arm in &spec.arms {
        for (k, ap) in arm.approaches.iter().enumerate() {
            let id = if ap.suffix.is_empty() { format!("{}_in", arm.name) } else { format!("{}_in_{}", arm.name, ap.suffix) };
            lanes.push(Lane { id: id.clone(), length: ap.length, entry: true, speed_limit: DEFAULT_SPEED_LIMIT });
            detectors.push(Detector { id: format!("det_{id}"), lane: id.clone(), position: ap.length - DETECTOR_SETBACK });
            let from_port = port(arm, -(k as f64 + 0.5));
            let (ux, uy) = direction(arm.angle_deg);
            for &(turn, target) in &ap.moves {
                let to_arm = arm_by_name(target);
                let to_port = port(to_arm, 0.5);
                let (length, radius) = arc(from_port, to_port, (-ux, -uy), direction(to_arm.angle_deg));
                let speed = (LATERAL_ACCEL * radius).sqrt().min(DEFAULT_SPEED_LIMIT);
                let letter = match turn {
                    Turn::Left => 'L',
                    Turn::Straight => 'T',
                    Turn::Right => 'R',
                };
                connections.push(Connection {
                    id: format!("{}_{}", arm.name, letter),
                    from_lane: id.clone(),
                    to_lane: format!("{}_out", to_arm.name),
                    turn,
                    internal_length: round2(length),
                    speed_limit: if speed < DEFAULT_SPEED_LIMIT { Some(round2(speed)) } else { None },
                });
                chords.push((from_port.angle(), to_port.angle()));
            }
        }
    }
    for arm in &spec.arms {
        lanes.push(Lane { id: format!("{}_out", arm.name), length: arm.exit_length, entry: false, speed_limit: DEFAULT_SPEED_LIMIT });
    }

    let mut conflicts = Vec::new();
    for a in 0..connections.len() {
        for b in (a + 1)..connections.len() {
            let (ca, cb) = (&connections[a], &connections[b]);
            if ca.from_lane == cb.from_lane {
                continue;
            }
            if ca.to_lane == cb.to_lane || chords_cross(chords[a], chords[b]) {
                conflicts.push([ca.id.clone(), cb.id.clone()]);
            }
        }
    }

    let phases = spec
        .phases
        .iter()
        .enumerate()
        .map(|(index, greens)| {
            let state = connections.iter().map(|c| greens.iter().find(|(id, _)| *id == c.id).map_or('r', |&(_, ch)| ch)).collect();
            PhaseDocument { index, state }
        })
        .collect();

    let doc = NetworkDocument { name: spec.name.to_string(), lanes, connections, conflicts, phases, detectors };
    RoadNetwork::from_document(doc).unwrap_or_else(|e| panic!("archetype {} is invalid: {e}", spec.name))
}

pub fn builtin_archetype(name: &str) -> Option<RoadNetwork> {
    spec(name).map(|s| build(&s))
}

pub fn builtin_archetypes() -> Vec<(String, RoadNetwork)> {
    ARCHETYPE_NAMES.iter().map(|&n| (n.to_string(), builtin_archetype(n).expect("listed archetype exists"))).collect()
}
