//! Signal program engine and the baseline controllers.
//!
//! Controllers only ever ask for a phase; the engine owns the clearing logic.
//! When a switch takes green away from any connection, those connections show
//! orange for `orange_duration` seconds before the new phase starts, and
//! commands received during that time are ignored.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::LoopReading;
use crate::net::{RoadNetwork, SignalColor, SignalState};
use crate::rng::{self, Stream};
use crate::sim::{Segment, Simulation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TlcError {
    #[error("phase {phase} out of range: program has {count} phases")]
    PhaseOutOfRange { phase: usize, count: usize },
    #[error("unknown controller `{0}` (expected fixed, gap, time or random)")]
    UnknownController(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TlcConfig {
    pub cycle_time: f64,
    pub orange_duration: f64,
    pub gap_threshold: f64,
    pub min_green: f64,
    pub max_green: f64,
    pub tolerated_loss: f64,
    /// Lower bound on speed when estimating a vehicle's time to clear.
    pub v_floor: f64,
}

impl Default for TlcConfig {
    fn default() -> Self {
        Self { cycle_time: 31.0, orange_duration: 6.0, gap_threshold: 3.0, min_green: 6.0, max_green: 45.0, tolerated_loss: 1.0, v_floor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerCommand {
    pub target_phase: usize,
    pub hold: bool,
}

impl ControllerCommand {
    pub fn hold(current: usize) -> Self {
        Self { target_phase: current, hold: true }
    }

    pub fn switch_to(phase: usize) -> Self {
        Self { target_phase: phase, hold: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEngineState {
    pub current_phase: usize,
    /// Green time served in the current phase; clearing time is not counted.
    pub phase_elapsed: f64,
    pub in_transition: bool,
    pub transition_remaining: f64,
    pub pending_phase: usize,
    pub orange_duration: f64,
}

impl SignalEngineState {
    pub fn new(orange_duration: f64) -> Self {
        Self { current_phase: 0, phase_elapsed: 0.0, in_transition: false, transition_remaining: 0.0, pending_phase: 0, orange_duration }
    }

    /// Applies `command` and returns the signal assignment for the next
    /// simulation step.
    pub fn step(&mut self, command: ControllerCommand, network: &RoadNetwork, dt: f64) -> Result<SignalState, TlcError> {
        let count = network.phase_count();
        if command.target_phase >= count {
            return Err(TlcError::PhaseOutOfRange { phase: command.target_phase, count });
        }
        if !self.in_transition && !command.hold && command.target_phase != self.current_phase {
            let losing = losing_green(network, self.current_phase, command.target_phase);
            if losing == 0 {
                self.current_phase = command.target_phase;
                self.pending_phase = command.target_phase;
                self.phase_elapsed = 0.0;
            } else {
                self.in_transition = true;
                self.transition_remaining = self.orange_duration;
                self.pending_phase = command.target_phase;
            }
        }

        if self.in_transition {
            let signals = clearing_assignment(network, self.current_phase, self.pending_phase);
            self.transition_remaining -= dt;
            if self.transition_remaining <= 1e-9 {
                self.in_transition = false;
                self.transition_remaining = 0.0;
                self.current_phase = self.pending_phase;
                self.phase_elapsed = 0.0;
            }
            return Ok(signals);
        }
        self.phase_elapsed += dt;
        Ok(network.phases[self.current_phase].signals.clone())
    }
}

fn losing_green(network: &RoadNetwork, from: usize, to: usize) -> usize {
    let (a, b) = (&network.phases[from].signals, &network.phases[to].signals);
    (0..a.len()).filter(|&c| a.get(c).is_green() && !b.get(c).is_green()).count()
}

/// The current phase with every connection that loses green shown orange.
pub fn clearing_assignment(network: &RoadNetwork, from: usize, to: usize) -> SignalState {
    let (a, b) = (&network.phases[from].signals, &network.phases[to].signals);
    SignalState((0..a.len()).map(|c| if a.get(c).is_green() && !b.get(c).is_green() { SignalColor::Orange } else { a.get(c) }).collect())
}

/// What a controller may look at when deciding.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub engine: &'a SignalEngineState,
    pub readings: &'a [LoopReading],
    /// Ground-truth vehicle state, for controllers that assume camera-like sensing.
    pub sim: &'a Simulation,
    pub dt: f64,
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    /// Called at the start of every episode.
    fn reset(&mut self);
    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand;
}

fn next_phase(network: &RoadNetwork, current: usize) -> usize {
    (current + 1) % network.phase_count()
}

#[derive(Debug, Clone)]
pub struct FixedTimeController {
    cycle_time: f64,
}

impl FixedTimeController {
    pub fn new(config: &TlcConfig) -> Self {
        Self { cycle_time: config.cycle_time }
    }
}

impl Controller for FixedTimeController {
    fn name(&self) -> &str {
        "fixed"
    }

    fn reset(&mut self) {}

    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand {
        let e = input.engine;
        if e.phase_elapsed >= self.cycle_time {
            ControllerCommand::switch_to(next_phase(input.sim.network(), e.current_phase))
        } else {
            ControllerCommand::hold(e.current_phase)
        }
    }
}

/// Actuated control: keeps green while a served lane streams, gaps out
/// once the smallest headway gap exceeds the threshold.
#[derive(Debug, Clone)]
pub struct GapBasedController {
    gap_threshold: f64,
    min_green: f64,
    max_green: f64,
}

impl GapBasedController {
    pub fn new(config: &TlcConfig) -> Self {
        Self { gap_threshold: config.gap_threshold, min_green: config.min_green, max_green: config.max_green }
    }

    /// Smallest time since last detection over lanes served green now.
    pub fn served_gap(network: &RoadNetwork, phase: usize, readings: &[LoopReading]) -> f64 {
        let served = network.served_lanes(&network.phases[phase].signals);
        readings
            .iter()
            .filter(|r| served.contains(&network.detector_lane(r.detector)))
            .map(|r| r.time_since_last_detection)
            .fold(f64::INFINITY, f64::min)
    }
}

impl Controller for GapBasedController {
    fn name(&self) -> &str {
        "gap"
    }

    fn reset(&mut self) {}

    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand {
        let e = input.engine;
        let network = input.sim.network();
        let g = Self::served_gap(network, e.current_phase, input.readings);
        let elapsed = e.phase_elapsed;
        if (g > self.gap_threshold && elapsed >= self.min_green) || elapsed >= self.max_green {
            ControllerCommand::switch_to(next_phase(network, e.current_phase))
        } else {
            ControllerCommand::hold(e.current_phase)
        }
    }
}

/// Fixed cycle that extends green while vehicles on served approaches have
/// accumulated more delay than tolerated during the current phase.
#[derive(Debug, Clone)]
pub struct TimeBasedController {
    config: TlcConfig,
    phase: Option<usize>,
    delay: HashMap<u64, f64>,
    extend_until: f64,
}

impl TimeBasedController {
    pub fn new(config: &TlcConfig) -> Self {
        Self { config: *config, phase: None, delay: HashMap::new(), extend_until: config.cycle_time }
    }

    pub fn extend_until(&self) -> f64 {
        self.extend_until
    }
}

impl Controller for TimeBasedController {
    fn name(&self) -> &str {
        "time"
    }

    fn reset(&mut self) {
        self.phase = None;
        self.delay.clear();
        self.extend_until = self.config.cycle_time;
    }

    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand {
        let e = input.engine;
        let sim = input.sim;
        let network = sim.network();
        if self.phase != Some(e.current_phase) || (e.phase_elapsed == 0.0 && !e.in_transition) {
            self.phase = Some(e.current_phase);
            self.delay.clear();
            self.extend_until = self.config.cycle_time;
        }
        if e.in_transition {
            return ControllerCommand::hold(e.current_phase);
        }

        let served = network.served_lanes(&network.phases[e.current_phase].signals);
        let on_served: Vec<_> = sim.state().vehicles.iter().filter(|v| matches!(v.segment, Segment::Lane(l) if served.contains(&l))).collect();
        for v in &on_served {
            let v_max = sim.allowed_speed(v.segment);
            *self.delay.entry(v.id).or_insert(0.0) += (1.0 - v.speed / v_max).max(0.0) * input.dt;
        }

        if e.phase_elapsed < self.extend_until {
            return ControllerCommand::hold(e.current_phase);
        }
        let time_to_pass = on_served
            .iter()
            .filter(|v| self.delay.get(&v.id).copied().unwrap_or(0.0) > self.config.tolerated_loss)
            .map(|v| {
                let lane = match v.segment {
                    Segment::Lane(l) => l,
                    Segment::Internal(_) => unreachable!("filtered to lanes"),
                };
                let dist = (network.lanes[lane].length - v.position).max(0.0);
                let internal = Segment::Internal(v.connection);
                dist / v.speed.max(self.config.v_floor) + sim.segment_length(internal) / sim.allowed_speed(internal)
            })
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        match time_to_pass {
            Some(t) if e.phase_elapsed < self.config.max_green => {
                self.extend_until = (e.phase_elapsed + t).min(self.config.max_green);
                ControllerCommand::hold(e.current_phase)
            }
            _ => ControllerCommand::switch_to(next_phase(network, e.current_phase)),
        }
    }
}

/// Uniformly random phase every step; the lower reference for learning.
#[derive(Debug, Clone)]
pub struct RandomController {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: rng::stream(seed, Stream::Policy) }
    }
}

impl Controller for RandomController {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self) {
        self.rng = rng::stream(self.seed, Stream::Policy);
    }

    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand {
        let n = input.sim.network().phase_count();
        ControllerCommand::switch_to(self.rng.gen_range(0..n))
    }
}

/// Builds a baseline controller by name.
pub fn baseline(name: &str, config: &TlcConfig, seed: u64) -> Result<Box<dyn Controller>, TlcError> {
    Ok(match name {
        "fixed" => Box::new(FixedTimeController::new(config)),
        "gap" => Box::new(GapBasedController::new(config)),
        "time" => Box::new(TimeBasedController::new(config)),
        "random" => Box::new(RandomController::new(seed)),
        other => return Err(TlcError::UnknownController(other.to_string())),
    })
}
