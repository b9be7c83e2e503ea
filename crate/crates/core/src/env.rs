//! Episodic control environment: phase selection as the action, a stack of
//! recent detector frames as the observation.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::LoopReading;
use crate::net::RoadNetwork;
use crate::sim::{Segment, SimConfig, SimError, Simulation};
use crate::tlc::{ControllerCommand, SignalEngineState, TlcConfig, TlcError};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range: the phase program has {count} phases")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("episode finished; call reset")]
    Finished,
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] TlcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: u64,
    pub gamma: f64,
    pub decision_interval: u64,
    /// Frames in the observation stack.
    pub frames: usize,
    /// Halt time at which a vehicle's waiting term saturates.
    pub wait_cap: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_steps: 3600, gamma: 0.99, decision_interval: 1, frames: 10, wait_cap: 120.0 }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 || self.decision_interval == 0 || self.frames == 0 {
            return Err(EnvError::Config("max_steps, decision_interval and frames must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EnvError::Config("gamma must be in (0, 1)".into()));
        }
        if self.wait_cap <= 0.0 {
            return Err(EnvError::Config("wait_cap must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub flicker: f64,
    pub teleport: f64,
    pub delay_term: f64,
    pub wait_term: f64,
    pub total: f64,
}

/// Reward for the current simulation state. Lane terms are averaged over all
/// lanes of the network; vehicles inside the junction are not counted.
pub fn compute_reward(sim: &Simulation, phase_changed: bool, teleported: u64, wait_cap: f64) -> RewardBreakdown {
    let lanes = sim.network().lanes.len();
    let mut delay = vec![(0.0, 0usize); lanes];
    let mut wait = vec![0.0; lanes];
    for v in &sim.state().vehicles {
        if let Segment::Lane(l) = v.segment {
            let v_max = sim.allowed_speed(v.segment);
            delay[l].0 += (1.0 - v.speed / v_max).clamp(0.0, 1.0);
            delay[l].1 += 1;
            wait[l] += (v.consecutive_halt / wait_cap).min(1.0);
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let delay_term = delay.iter().map(|&(s, n)| mean(s, n)).sum::<f64>() / lanes as f64;
    let wait_term = delay.iter().zip(&wait).map(|(&(_, n), &w)| mean(w, n)).sum::<f64>() / lanes as f64;
    let flicker = if phase_changed { 1.0 } else { 0.0 };
    let teleport = teleported.min(1) as f64;
    let total = -0.1 * flicker - 0.1 * teleport - 0.4 * delay_term - 0.4 * wait_term;
    RewardBreakdown { flicker, teleport, delay_term, wait_term, total }
}

/// Rolling window of `(phase, occupancy fractions…)` frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    depth: usize,
    frames: VecDeque<Vec<f64>>,
}

impl FrameStack {
    /// A stack filled with `depth` copies of `initial`.
    pub fn new(depth: usize, initial: Vec<f64>) -> Self {
        Self { depth, frames: std::iter::repeat_n(initial, depth).collect() }
    }

    pub fn frame(phase: usize, readings: &[LoopReading]) -> Vec<f64> {
        std::iter::once(phase as f64).chain(readings.iter().map(|r| r.occupancy / 100.0)).collect()
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        self.frames.pop_front();
        self.frames.push_back(frame);
        debug_assert_eq!(self.frames.len(), self.depth);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode reached its step limit. This is a truncation, not a
    /// terminal state: value estimates should still bootstrap through it.
    pub done: bool,
    pub info: RewardBreakdown,
    pub teleported: u64,
    pub arrived: u64,
    /// Summed timeLoss of the vehicles that arrived during the step.
    pub arrived_time_loss: f64,
}

/// Conventional reset/step interface so any agent can drive an environment.
pub trait Environment {
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
    fn action_count(&self) -> usize;
    fn observation_len(&self) -> usize;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub tlc: TlcConfig,
    pub episode: EpisodeConfig,
}

#[derive(Debug, Clone)]
pub struct TrafficEnv {
    network: Arc<RoadNetwork>,
    config: EnvConfig,
    sim: Simulation,
    engine: SignalEngineState,
    stack: FrameStack,
    done: bool,
}

impl TrafficEnv {
    pub fn new(network: Arc<RoadNetwork>, config: EnvConfig) -> Result<Self, EnvError> {
        config.episode.validate()?;
        let sim = Simulation::new(Arc::clone(&network), config.sim)?;
        let stack = FrameStack::new(config.episode.frames, FrameStack::frame(0, &sim.state().readings));
        Ok(Self { network, config, sim, engine: SignalEngineState::new(config.tlc.orange_duration), stack, done: false })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn engine(&self) -> &SignalEngineState {
        &self.engine
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.network
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn observation(&self) -> Vec<f64> {
        self.stack.flatten()
    }
}

impl Environment for TrafficEnv {
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        self.config.sim.rng_seed = seed;
        self.sim = Simulation::new(Arc::clone(&self.network), self.config.sim)?;
        self.engine = SignalEngineState::new(self.config.tlc.orange_duration);
        self.stack = FrameStack::new(self.config.episode.frames, FrameStack::frame(0, &self.sim.state().readings));
        self.done = false;
        Ok(self.observation())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let count = self.network.phase_count();
        if action >= count {
            return Err(EnvError::ActionOutOfRange { action, count });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        let changed = !self.engine.in_transition && action != self.engine.current_phase;
        let dt = self.config.sim.dt;
        let (mut teleported, mut arrived) = (0, 0);
        let first_arrival = self.sim.state().arrivals.len();
        let mut command = ControllerCommand::switch_to(action);
        for _ in 0..self.config.episode.decision_interval {
            let signals = self.engine.step(command, &self.network, dt)?;
            let report = self.sim.step(&signals)?;
            teleported += report.teleported;
            arrived += report.arrived;
            command = ControllerCommand::hold(self.engine.current_phase);
            if self.sim.state().step >= self.config.episode.max_steps {
                break;
            }
        }
        let arrived_time_loss = self.sim.state().arrivals[first_arrival..].iter().map(|a| a.time_loss).sum();
        self.stack.push(FrameStack::frame(self.engine.current_phase, &self.sim.state().readings));
        let info = compute_reward(&self.sim, changed, teleported, self.config.episode.wait_cap);
        self.done = self.sim.state().step >= self.config.episode.max_steps;
        Ok(StepOutcome { observation: self.observation(), reward: info.total, done: self.done, info, teleported, arrived, arrived_time_loss })
    }

    fn action_count(&self) -> usize {
        self.network.phase_count()
    }

    fn observation_len(&self) -> usize {
        self.config.episode.frames * (1 + self.network.detectors.len())
    }
}
