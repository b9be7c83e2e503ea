//! Deterministic discrete-time microscopic simulation of one junction.
//!
//! Vehicles follow a Krauss-style safe-speed law. Each step updates vehicles
//! in a fixed downstream-to-upstream order so that every follower sees its
//! leader's post-move position and speed:
//!
//! 1. exit lanes, leader first, lanes in lexicographic id order;
//! 2. vehicles on internal junction paths, grouped by target exit lane and
//!    sorted by remaining distance to it;
//! 3. approach lanes, leader first, lanes in lexicographic id order.
//!
//! Vehicles on different internal paths that merge into the same exit lane
//! are projected onto the exit lane's coordinate so they keep spacing at the
//! merge. Crossing conflicts inside the junction are resolved by the signal
//! program alone; there is no 2-D collision model.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{self, DetectorBank, LoopReading, Pass};
use crate::net::{ConnIdx, LaneIdx, RoadNetwork, SignalColor, SignalState};
use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("negative gap {0} m: vehicles already overlap")]
    NegativeGap(f64),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("signal assignment covers {got} connections, network has {expected}")]
    SignalLength { expected: usize, got: usize },
    #[error("cannot place vehicle: {0}")]
    Placement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub max_velocity: f64,
    pub acceleration: f64,
    pub deceleration: f64,
    pub min_gap: f64,
    pub length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { max_velocity: 13.89, acceleration: 3.0, deceleration: 3.0, min_gap: 2.5, length: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub spawn_probability: f64,
    /// Seconds of uninterrupted halt before a vehicle is removed.
    pub teleport_after: f64,
    pub rng_seed: u64,
    /// Krauss driver imperfection in [0, 1].
    pub sigma: f64,
    /// Speeds below this count as halted.
    pub halt_speed: f64,
    /// Look-ahead used by `g` (minor green) movements when yielding.
    pub yield_horizon: f64,
    pub vehicle: VehicleParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            spawn_probability: 0.2,
            teleport_after: 300.0,
            rng_seed: 0,
            sigma: 0.0,
            halt_speed: 0.1,
            yield_horizon: 3.0,
            vehicle: VehicleParams::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let v = &self.vehicle;
        let checks = [
            (self.dt > 0.0, "dt must be > 0"),
            ((0.0..=1.0).contains(&self.spawn_probability), "spawn_probability must be in [0, 1]"),
            (self.teleport_after > 0.0, "teleport_after must be > 0"),
            ((0.0..=1.0).contains(&self.sigma), "sigma must be in [0, 1]"),
            (self.halt_speed >= 0.0, "halt_speed must be >= 0"),
            (self.yield_horizon >= 0.0, "yield_horizon must be >= 0"),
            (
                v.max_velocity > 0.0 && v.acceleration > 0.0 && v.deceleration > 0.0 && v.min_gap > 0.0 && v.length > 0.0,
                "vehicle parameters must be > 0",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(SimError::Config(msg.to_string())),
            None => Ok(()),
        }
    }
}

/// Where a vehicle's front bumper is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Lane(LaneIdx),
    /// The internal path of a connection.
    Internal(ConnIdx),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u64,
    pub segment: Segment,
    /// Front bumper, metres from the start of `segment`.
    pub position: f64,
    pub speed: f64,
    /// The movement this vehicle takes through the junction (its route).
    pub connection: ConnIdx,
    pub spawn_step: u64,
    pub time_loss: f64,
    pub waiting_time: f64,
    pub consecutive_halt: f64,
}

/// Final metrics of a vehicle that left the network at the end of its route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: u64,
    pub connection: ConnIdx,
    pub spawn_step: u64,
    pub arrival_step: u64,
    pub time_loss: f64,
    pub waiting_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingSpawn {
    lane: LaneIdx,
    connection: ConnIdx,
    /// Drawn this step and not yet refused.
    fresh: bool,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub step: u64,
    /// Ordered by id (insertion order).
    pub vehicles: Vec<Vehicle>,
    pub spawned_total: u64,
    pub arrived_total: u64,
    pub teleported_this_step: u64,
    pub teleported_total: u64,
    /// Spawn requests that could not be placed immediately.
    pub deferred_total: u64,
    pub signals: SignalState,
    pub readings: Vec<LoopReading>,
    pub arrivals: Vec<Arrival>,
    pending: VecDeque<PendingSpawn>,
    next_id: u64,
    detectors: DetectorBank,
    spawn_rng: ChaCha8Rng,
    dawdle_rng: ChaCha8Rng,
}

impl SimState {
    pub fn pending_spawns(&self) -> usize {
        self.pending.len()
    }

    /// `spawned = in network + arrived + teleported`.
    pub fn conservation_holds(&self) -> bool {
        self.spawned_total == self.vehicles.len() as u64 + self.arrived_total + self.teleported_total
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    pub spawned: u64,
    pub arrived: u64,
    pub teleported: u64,
}

/// Largest speed from which a follower can still stop behind a leader that
/// brakes at `deceleration`, given `gap` metres of clear road.
pub fn safe_speed(gap: f64, leader_speed: f64, params: &VehicleParams, dt: f64) -> Result<f64, SimError> {
    if gap < 0.0 {
        return Err(SimError::NegativeGap(gap));
    }
    let b = params.deceleration;
    let v = -b * dt + (b * b * dt * dt + leader_speed * leader_speed + 2.0 * b * gap).sqrt();
    Ok(v.max(0.0))
}

/// Accumulates one step of delay and halting time for a vehicle whose speed
/// has already been updated. `v_max` is the allowed speed where it drives.
pub fn accumulate_metrics(vehicle: &mut Vehicle, v_max: f64, dt: f64, halt_speed: f64) {
    vehicle.time_loss += ((1.0 - vehicle.speed / v_max) * dt).max(0.0);
    if vehicle.speed < halt_speed {
        vehicle.waiting_time += dt;
        vehicle.consecutive_halt += dt;
    } else {
        vehicle.consecutive_halt = 0.0;
    }
}

/// Time for a vehicle at `speed` with acceleration `accel` to cover `dist`.
fn arrival_time(dist: f64, speed: f64, accel: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    (-speed + (speed * speed + 2.0 * accel * dist).sqrt()) / accel
}

/// Post-move footprint of an already updated vehicle, in some reference frame.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    front: f64,
    rear: f64,
    speed: f64,
}

#[derive(Debug, Clone, Copy)]
struct Obstacle {
    gap: f64,
    speed: f64,
}

impl Obstacle {
    fn nearer(self, other: Option<Obstacle>) -> Obstacle {
        match other {
            Some(o) if o.gap < self.gap => o,
            _ => self,
        }
    }
}

/// One junction's simulation: network, configuration and evolving state.
#[derive(Debug, Clone)]
pub struct Simulation {
    network: Arc<RoadNetwork>,
    config: SimConfig,
    state: SimState,
    /// Processing order of lanes.
    exit_order: Vec<LaneIdx>,
    approach_order: Vec<LaneIdx>,
}

impl Simulation {
    pub fn new(network: Arc<RoadNetwork>, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut exit_order: Vec<LaneIdx> = network.exit_lanes().collect();
        exit_order.sort_by(|&a, &b| network.lanes[a].id.cmp(&network.lanes[b].id));
        let mut approach_order: Vec<LaneIdx> = network.approach_lanes().collect();
        approach_order.sort_by(|&a, &b| network.lanes[a].id.cmp(&network.lanes[b].id));
        let detectors = network.detectors.len();
        let state = SimState {
            step: 0,
            vehicles: Vec::new(),
            spawned_total: 0,
            arrived_total: 0,
            teleported_this_step: 0,
            teleported_total: 0,
            deferred_total: 0,
            signals: SignalState::all(SignalColor::Red, network.connections.len()),
            readings: (0..detectors)
                .map(|d| LoopReading { detector: d, interval_start: 0, occupancy: 0.0, flow: 0, time_since_last_detection: f64::INFINITY })
                .collect(),
            arrivals: Vec::new(),
            pending: VecDeque::new(),
            next_id: 0,
            detectors: DetectorBank::new(detectors),
            spawn_rng: rng::stream(config.rng_seed, Stream::Spawn),
            dawdle_rng: rng::stream(config.rng_seed, Stream::Dawdle),
        };
        Ok(Self { network, config, state, exit_order, approach_order })
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.network
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn segment_length(&self, seg: Segment) -> f64 {
        match seg {
            Segment::Lane(l) => self.network.lanes[l].length,
            Segment::Internal(c) => self.network.connections[c].internal_length,
        }
    }

    /// Allowed speed for our vehicles on `seg`.
    pub fn allowed_speed(&self, seg: Segment) -> f64 {
        let limit = match seg {
            Segment::Lane(l) => self.network.lanes[l].speed_limit,
            Segment::Internal(c) => self.network.connection_speed(c),
        };
        limit.min(self.config.vehicle.max_velocity)
    }

    pub fn segment_name(&self, seg: Segment) -> String {
        match seg {
            Segment::Lane(l) => self.network.lanes[l].id.clone(),
            Segment::Internal(c) => format!(":{}", self.network.connections[c].id),
        }
    }

    /// Places a vehicle directly, bypassing the spawn process. Intended for
    /// tests and scripted scenarios.
    pub fn insert_vehicle(&mut self, connection: ConnIdx, segment: Segment, position: f64, speed: f64) -> Result<u64, SimError> {
        if connection >= self.network.connections.len() {
            return Err(SimError::Placement(format!("unknown connection {connection}")));
        }
        let on_path = match segment {
            Segment::Lane(l) => l == self.network.from_lane(connection) || l == self.network.to_lane(connection),
            Segment::Internal(c) => c == connection,
        };
        if !on_path {
            return Err(SimError::Placement("segment is not on the vehicle's route".into()));
        }
        if !(0.0..=self.segment_length(segment)).contains(&position) || speed < 0.0 || speed > self.allowed_speed(segment) {
            return Err(SimError::Placement(format!("position {position} / speed {speed} out of range")));
        }
        let id = self.state.next_id;
        self.state.next_id += 1;
        self.state.vehicles.push(Vehicle {
            id,
            segment,
            position,
            speed,
            connection,
            spawn_step: self.state.step,
            time_loss: 0.0,
            waiting_time: 0.0,
            consecutive_halt: 0.0,
        });
        self.state.spawned_total += 1;
        Ok(id)
    }

    /// Advances the simulation by one step under `signals`.
    pub fn step(&mut self, signals: &SignalState) -> Result<StepReport, SimError> {
        let n_conn = self.network.connections.len();
        if signals.len() != n_conn {
            return Err(SimError::SignalLength { expected: n_conn, got: signals.len() });
        }
        self.state.step += 1;
        self.state.signals = signals.clone();
        self.state.teleported_this_step = 0;
        let dt = self.config.dt;

        let passes = self.move_vehicles(signals);

        // Metrics, then arrivals.
        let halt = self.config.halt_speed;
        let mut report = StepReport::default();
        let mut arrived_flags = Vec::with_capacity(self.state.vehicles.len());
        for i in 0..self.state.vehicles.len() {
            let seg = self.state.vehicles[i].segment;
            let v_max = self.allowed_speed(seg);
            accumulate_metrics(&mut self.state.vehicles[i], v_max, dt, halt);
            let v = &self.state.vehicles[i];
            arrived_flags.push(matches!(seg, Segment::Lane(l) if self.network.outgoing(l).is_empty()) && v.position > self.segment_length(seg));
        }
        let step = self.state.step;
        let mut kept = Vec::with_capacity(self.state.vehicles.len());
        for (v, arrived) in std::mem::take(&mut self.state.vehicles).into_iter().zip(arrived_flags) {
            if arrived {
                self.state.arrivals.push(Arrival {
                    id: v.id,
                    connection: v.connection,
                    spawn_step: v.spawn_step,
                    arrival_step: step,
                    time_loss: v.time_loss,
                    waiting_time: v.waiting_time,
                });
                report.arrived += 1;
            } else {
                kept.push(v);
            }
        }
        self.state.vehicles = kept;
        self.state.arrived_total += report.arrived;

        report.teleported = self.teleport_check();

        for d in 0..self.network.detectors.len() {
            let lane = self.network.detector_lane(d);
            let sample = detect::sample(self.network.detectors[d].position, &passes[lane], dt);
            self.state.readings[d] = self.state.detectors.record(d, step - 1, sample, dt);
        }

        report.spawned = self.spawn_vehicles();
        Ok(report)
    }

    /// Removes every vehicle halted for at least `teleport_after` seconds,
    /// lowest id first. Returns the number removed.
    pub fn teleport_check(&mut self) -> u64 {
        let limit = self.config.teleport_after;
        let before = self.state.vehicles.len();
        // `vehicles` is kept in id order, so retain removes lowest ids first.
        self.state.vehicles.retain(|v| v.consecutive_halt < limit);
        let removed = (before - self.state.vehicles.len()) as u64;
        self.state.teleported_this_step += removed;
        self.state.teleported_total += removed;
        removed
    }

    /// Bernoulli spawn on a uniformly random entry lane with a uniformly
    /// random route from it. Requests that would violate the minimum gap wait
    /// in a FIFO queue and are retried every step.
    pub fn spawn_vehicles(&mut self) -> u64 {
        let entries: Vec<LaneIdx> = self.network.entry_lanes().collect();
        if entries.is_empty() {
            return 0;
        }
        let draw: f64 = self.state.spawn_rng.gen();
        if draw < self.config.spawn_probability {
            let lane = entries[self.state.spawn_rng.gen_range(0..entries.len())];
            let routes = self.network.outgoing(lane);
            let connection = routes[self.state.spawn_rng.gen_range(0..routes.len())];
            self.state.pending.push_back(PendingSpawn { lane, connection, fresh: true });
        }

        let params = self.config.vehicle;
        let mut spawned = 0;
        let mut waiting = VecDeque::with_capacity(self.state.pending.len());
        while let Some(req) = self.state.pending.pop_front() {
            let tail_rear = self
                .state
                .vehicles
                .iter()
                .filter(|v| v.segment == Segment::Lane(req.lane))
                .map(|v| v.position - params.length)
                .fold(f64::INFINITY, f64::min);
            if tail_rear - params.length >= params.min_gap {
                let id = self.state.next_id;
                self.state.next_id += 1;
                self.state.vehicles.push(Vehicle {
                    id,
                    segment: Segment::Lane(req.lane),
                    position: params.length,
                    speed: 0.0,
                    connection: req.connection,
                    spawn_step: self.state.step,
                    time_loss: 0.0,
                    waiting_time: 0.0,
                    consecutive_halt: 0.0,
                });
                spawned += 1;
            } else {
                if req.fresh {
                    self.state.deferred_total += 1;
                }
                waiting.push_back(PendingSpawn { fresh: false, ..req });
            }
        }
        self.state.pending = waiting;
        self.state.spawned_total += spawned;
        spawned
    }

    fn processing_order(&self) -> Vec<usize> {
        let vehicles = &self.state.vehicles;
        let mut order = Vec::with_capacity(vehicles.len());
        let leader_first = |lane: LaneIdx, out: &mut Vec<usize>| {
            let mut on: Vec<usize> = (0..vehicles.len()).filter(|&i| vehicles[i].segment == Segment::Lane(lane)).collect();
            on.sort_by(|&a, &b| vehicles[b].position.total_cmp(&vehicles[a].position).then(vehicles[a].id.cmp(&vehicles[b].id)));
            out.extend(on);
        };
        for &lane in &self.exit_order {
            leader_first(lane, &mut order);
        }
        for &lane in &self.exit_order {
            let mut on: Vec<(f64, u64, usize)> = (0..vehicles.len())
                .filter_map(|i| match vehicles[i].segment {
                    Segment::Internal(c) if self.network.to_lane(c) == lane => {
                        Some((self.network.connections[c].internal_length - vehicles[i].position, vehicles[i].id, i))
                    }
                    _ => None,
                })
                .collect();
            on.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.extend(on.into_iter().map(|(_, _, i)| i));
        }
        for &lane in &self.approach_order {
            leader_first(lane, &mut order);
        }
        order
    }

    /// Per connection: whether a vehicle is inside the junction on it, and
    /// the earliest arrival at its stop line of a vehicle routed over it.
    fn yield_snapshot(&self) -> (Vec<bool>, Vec<f64>) {
        let n = self.network.connections.len();
        let mut occupied = vec![false; n];
        let mut eta = vec![f64::INFINITY; n];
        let accel = self.config.vehicle.acceleration;
        for v in &self.state.vehicles {
            match v.segment {
                Segment::Internal(c) => occupied[c] = true,
                Segment::Lane(l) if !self.network.outgoing(l).is_empty() => {
                    let t = arrival_time(self.network.lanes[l].length - v.position, v.speed, accel);
                    eta[v.connection] = eta[v.connection].min(t);
                }
                Segment::Lane(_) => {}
            }
        }
        (occupied, eta)
    }

    fn must_yield(&self, conn: ConnIdx, signals: &SignalState, occupied: &[bool], eta: &[f64]) -> bool {
        self.network.conflicting(conn).iter().any(|&other| {
            matches!(signals.get(other), SignalColor::GreenPriority | SignalColor::Orange)
                && (occupied[other] || eta[other] <= self.config.yield_horizon)
        })
    }

    /// Updates speeds and positions of all vehicles. Returns, per lane, the
    /// front trajectories of vehicles that started the step on it.
    fn move_vehicles(&mut self, signals: &SignalState) -> Vec<Vec<Pass>> {
        let net = Arc::clone(&self.network);
        let params = self.config.vehicle;
        let dt = self.config.dt;
        let (occupied, eta) = self.yield_snapshot();
        let order = self.processing_order();

        let mut passes = vec![Vec::new(); net.lanes.len()];
        // Updated vehicles, by lane (lane coordinates) and by exit lane
        // (merge coordinates: distance past the exit lane's start).
        let mut on_lane: Vec<Vec<Footprint>> = vec![Vec::new(); net.lanes.len()];
        let mut on_conn: Vec<Vec<Footprint>> = vec![Vec::new(); net.connections.len()];
        let mut merging: Vec<Vec<Footprint>> = vec![Vec::new(); net.lanes.len()];

        for idx in order {
            let v = self.state.vehicles[idx].clone();
            let conn = v.connection;
            let exit = net.to_lane(conn);
            let internal_len = net.connections[conn].internal_length;
            let seg_len = self.segment_length(v.segment);

            // Nearest obstacle ahead, as clear distance beyond min_gap.
            let mut obstacle: Option<Obstacle> = None;
            let mut consider = |gap: f64, speed: f64| {
                let o = Obstacle { gap, speed };
                obstacle = Some(o.nearer(obstacle));
            };
            let merge_x = match v.segment {
                Segment::Lane(l) if l == exit => v.position,
                Segment::Internal(_) => v.position - internal_len,
                Segment::Lane(l) => v.position - net.lanes[l].length - internal_len,
            };
            match v.segment {
                Segment::Lane(l) if l == exit => {
                    for f in &on_lane[l] {
                        consider(f.rear - v.position - params.min_gap, f.speed);
                    }
                }
                Segment::Internal(_) => {
                    for f in &merging[exit] {
                        consider(f.rear - merge_x - params.min_gap, f.speed);
                    }
                }
                Segment::Lane(l) => {
                    for f in &on_lane[l] {
                        consider(f.rear - v.position - params.min_gap, f.speed);
                    }
                    for &other in net.outgoing(l) {
                        if other == conn {
                            continue;
                        }
                        for f in on_conn[other].iter().filter(|f| f.rear < 0.0) {
                            consider(seg_len + f.rear - v.position - params.min_gap, f.speed);
                        }
                    }
                    for f in merging[exit].iter().filter(|f| f.front > merge_x) {
                        consider(f.rear - merge_x - params.min_gap, f.speed);
                    }
                }
            }

            let mut speed = (v.speed + params.acceleration * dt).min(self.allowed_speed(v.segment));
            if let Some(o) = obstacle {
                speed = if o.gap < 0.0 { 0.0 } else { speed.min(safe_speed(o.gap, o.speed, &params, dt).expect("gap checked")).min(o.gap / dt) };
            }

            // Slow down in time for the next segment's speed limit.
            let next = match v.segment {
                Segment::Lane(l) if l == exit => None,
                Segment::Lane(_) => Some(Segment::Internal(conn)),
                Segment::Internal(_) => Some(Segment::Lane(exit)),
            };
            if let Some(next) = next {
                let dist = seg_len - v.position;
                let limit = self.allowed_speed(next);
                if dist >= 0.0 && limit < speed {
                    speed = speed.min(safe_speed(dist, limit, &params, dt).expect("dist checked"));
                }
            }

            // Stop line.
            if let Segment::Lane(l) = v.segment {
                if l != exit {
                    let signal = signals.get(conn);
                    let stop_gap = seg_len - v.position - params.min_gap;
                    let stop_speed = if stop_gap < 0.0 { 0.0 } else { safe_speed(stop_gap, 0.0, &params, dt).expect("gap checked") };
                    let can_stop = stop_speed >= v.speed - params.deceleration * dt;
                    let stop = match signal {
                        SignalColor::Red => true,
                        SignalColor::Orange => can_stop,
                        SignalColor::GreenMinor => can_stop && self.must_yield(conn, signals, &occupied, &eta),
                        SignalColor::GreenPriority => false,
                    };
                    if stop {
                        speed = speed.min(stop_speed);
                    }
                }
            }

            if self.config.sigma > 0.0 {
                let u: f64 = self.state.dawdle_rng.gen();
                speed = (speed - self.config.sigma * params.acceleration * dt * u).max(0.0);
            }
            let speed = speed.max(0.0);

            // Advance along the route.
            let start_segment = v.segment;
            let start_pos = v.position;
            let mut segment = v.segment;
            let mut position = v.position + speed * dt;
            loop {
                let len = self.segment_length(segment);
                if position <= len {
                    break;
                }
                match segment {
                    Segment::Lane(l) if l == exit => break,
                    Segment::Lane(_) => segment = Segment::Internal(conn),
                    Segment::Internal(_) => segment = Segment::Lane(exit),
                }
                position -= len;
            }

            if let Segment::Lane(l) = start_segment {
                if l != exit {
                    passes[l].push(Pass { start: start_pos, end: start_pos + speed * dt, length: params.length });
                }
            }

            let rear = position - params.length;
            let footprint_in = |front: f64| Footprint { front, rear: front - params.length, speed };
            match segment {
                Segment::Lane(l) if l == exit => {
                    on_lane[l].push(Footprint { front: position, rear, speed });
                    merging[exit].push(footprint_in(position));
                }
                Segment::Internal(c) => {
                    on_conn[c].push(Footprint { front: position, rear, speed });
                    merging[exit].push(footprint_in(position - internal_len));
                }
                Segment::Lane(l) => on_lane[l].push(Footprint { front: position, rear, speed }),
            }

            let vehicle = &mut self.state.vehicles[idx];
            vehicle.segment = segment;
            vehicle.position = position;
            vehicle.speed = speed;
        }
        passes
    }

    /// Clear distance `leader_rear - follower_front` for every pair of
    /// consecutive vehicles on the same segment.
    pub fn same_segment_gaps(&self) -> Vec<Gap> {
        let len = self.config.vehicle.length;
        let mut by_seg: std::collections::BTreeMap<(u8, usize), Vec<&Vehicle>> = Default::default();
        for v in &self.state.vehicles {
            let key = match v.segment {
                Segment::Lane(l) => (0, l),
                Segment::Internal(c) => (1, c),
            };
            by_seg.entry(key).or_default().push(v);
        }
        let mut gaps = Vec::new();
        for list in by_seg.values_mut() {
            list.sort_by(|a, b| b.position.total_cmp(&a.position));
            for pair in list.windows(2) {
                gaps.push(Gap {
                    leader: pair[0].id,
                    follower: pair[1].id,
                    gap: pair[0].position - len - pair[1].position,
                    standstill: pair[0].speed == 0.0 && pair[1].speed == 0.0,
                });
            }
        }
        gaps
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub leader: u64,
    pub follower: u64,
    pub gap: f64,
    pub standstill: bool,
}
