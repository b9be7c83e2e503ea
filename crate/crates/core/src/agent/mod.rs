//! Deep Q-learning with n-step returns and a periodically synchronised
//! target network.

pub mod checkpoint;
pub mod network;
pub mod replay;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvError, Environment, FrameStack};
use crate::rng::{self, Stream};
use crate::tlc::{ControlInput, Controller, ControllerCommand};

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader};
pub use network::{Adam, AdamConfig, Mlp, NetworkError};
pub use replay::{n_step_return, NStepBuilder, ReplayBuffer, SumTree, Transition};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("non-finite loss at iteration {iteration}, env step {env_steps}")]
    NonFinite { iteration: u64, env_steps: u64, checkpoint: Box<Checkpoint> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub learning_rate: f64,
    pub optimizer_epsilon: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: u64,
    pub steps_per_iteration: u64,
    pub max_episode_steps: u64,
    pub gamma: f64,
    pub n_step: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_period: u64,
    pub min_replay_before_training: usize,
    /// Environment steps between gradient updates.
    pub update_period: u64,
    pub prioritized: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            learning_rate: 6.25e-5,
            optimizer_epsilon: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            iterations: 100,
            steps_per_iteration: 36_000,
            max_episode_steps: 3600,
            gamma: 0.99,
            n_step: 3,
            replay_capacity: 100_000,
            batch_size: 32,
            target_sync_period: 8000,
            min_replay_before_training: 2000,
            update_period: 4,
            prioritized: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            self.iterations as f64,
            self.steps_per_iteration as f64,
            self.max_episode_steps as f64,
            self.n_step as f64,
            self.replay_capacity as f64,
            self.batch_size as f64,
            self.target_sync_period as f64,
            self.update_period as f64,
            self.learning_rate,
            self.optimizer_epsilon,
        ];
        if positive.iter().any(|&x| x.is_nan() || x <= 0.0) {
            return Err(TrainError::Config("all counts and rates must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(TrainError::Config("epsilon must be in [0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TrainError::Config("gamma must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.optimizer_epsilon }
    }

    /// Hex SHA-256 over this config and the network shape.
    pub fn hash(&self, layer_sizes: &[usize]) -> String {
        let text = serde_json::to_string(&(self, layer_sizes)).expect("config serialises");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lowest index among the maximal values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy action. One uniform draw is always consumed for the coin flip.
pub fn select_action(net: &Mlp, observation: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<usize, NetworkError> {
    let coin: f64 = rng.gen();
    if coin < epsilon {
        return Ok(rng.gen_range(0..net.output_width()));
    }
    Ok(argmax(&net.forward(observation)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub mean_loss: f64,
    #[serde(rename = "mean_timeLoss")]
    pub mean_time_loss: f64,
    pub wallclock_s: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iteration,env_steps,mean_return,mean_loss,mean_timeLoss,wallclock_s";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{:.3}", self.iteration, self.env_steps, self.mean_return, self.mean_loss, self.mean_time_loss, self.wallclock_s)
    }
}

/// Owns the learning state and drives an environment one iteration at a time.
pub struct Trainer<E: Environment> {
    env: E,
    config: TrainConfig,
    seed: u64,
    online: Mlp,
    target: Mlp,
    adam: Adam,
    replay: ReplayBuffer,
    epsilon_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    iteration: u64,
    env_steps: u64,
    episodes: u64,
}

impl<E: Environment> Trainer<E> {
    pub fn new(env: E, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut init = rng::stream(seed, Stream::Init);
        let online = Mlp::q_network(env.observation_len(), env.action_count(), &mut init)?;
        let params = online.params().len();
        Ok(Self {
            env,
            target: online.clone(),
            online,
            adam: Adam::new(config.adam(), params),
            replay: ReplayBuffer::new(config.replay_capacity, config.prioritized),
            epsilon_rng: rng::stream(seed, Stream::Epsilon),
            replay_rng: rng::stream(seed, Stream::Replay),
            config,
            seed,
            iteration: 0,
            env_steps: 0,
            episodes: 0,
        })
    }

    /// Continues from a checkpoint. Parameters, optimiser, random streams and
    /// counters are restored; the replay buffer is not stored in checkpoints,
    /// so it refills (with a fresh warm-up) before learning resumes.
    pub fn resume(env: E, checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        let h = &checkpoint.header;
        let mut trainer = Self::new(env, h.config, h.seed)?;
        let online = checkpoint.online_network().map_err(|e| TrainError::Config(e.to_string()))?;
        if online.sizes() != trainer.online.sizes() {
            return Err(TrainError::Config(format!(
                "checkpoint layer sizes {:?} do not fit this environment ({:?})",
                online.sizes(),
                trainer.online.sizes()
            )));
        }
        trainer.online = online;
        trainer.target = checkpoint.target_network().map_err(|e| TrainError::Config(e.to_string()))?;
        trainer.adam = checkpoint.optimizer(h.config.adam());
        trainer.epsilon_rng = h.epsilon_rng.clone();
        trainer.replay_rng = h.replay_rng.clone();
        trainer.iteration = h.iteration;
        trainer.env_steps = h.env_steps;
        trainer.episodes = h.episodes;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                config_hash: self.config.hash(self.online.sizes()),
                config: self.config,
                layer_sizes: self.online.sizes().to_vec(),
                seed: self.seed,
                iteration: self.iteration,
                env_steps: self.env_steps,
                episodes: self.episodes,
                adam_step: self.adam.step,
                epsilon_rng: self.epsilon_rng.clone(),
                replay_rng: self.replay_rng.clone(),
            },
            online: self.online.params().to_vec(),
            target: self.target.params().to_vec(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    fn learn(&mut self) -> Result<f64, TrainError> {
        let batch = self.config.batch_size;
        let sample = self.replay.sample(batch, &mut self.replay_rng);
        let width = self.online.input_width();
        let mut inputs = Vec::with_capacity(batch * width);
        let mut successors = Vec::with_capacity(batch * width);
        let mut actions = Vec::with_capacity(batch);
        for &i in &sample.indices {
            let t = self.replay.get(i);
            inputs.extend_from_slice(&t.observation);
            successors.extend_from_slice(&t.successor);
            actions.push(t.action);
        }
        let next = self.target.forward_batch(&successors)?;
        let n_out = self.target.output_width();
        let targets: Vec<f64> = sample
            .indices
            .iter()
            .zip(next.output().chunks_exact(n_out))
            .map(|(&i, q)| {
                let t = self.replay.get(i);
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                t.reward + if t.done { 0.0 } else { self.config.gamma.powi(t.steps as i32) * best }
            })
            .collect();
        let weights = self.config.prioritized.then_some(sample.weights.as_slice());
        let (loss, grad, td) = self.online.td_gradient(&inputs, &actions, &targets, weights)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { iteration: self.iteration, env_steps: self.env_steps, checkpoint: Box::new(self.checkpoint()) });
        }
        self.adam.update(self.online.params_mut(), &grad);
        self.replay.update_priorities(&sample.indices, &td);
        Ok(loss)
    }

    fn store(&mut self, transitions: Vec<Transition>) {
        for t in transitions {
            self.replay.push(t);
        }
    }

    /// Runs `steps_per_iteration` environment steps, starting a fresh episode
    /// and truncating the last one at the iteration boundary.
    pub fn run_iteration(&mut self) -> Result<LogRow, TrainError> {
        let started = Instant::now();
        let mut builder = NStepBuilder::new(self.config.n_step, self.config.gamma);
        let mut returns = Vec::new();
        let (mut episode_return, mut losses, mut loss_sum) = (0.0, 0u64, 0.0);
        let (mut arrived, mut arrived_loss) = (0u64, 0.0);
        let mut episode_steps = 0u64;
        let mut obs: Arc<[f64]> = Arc::from(self.env.reset(rng::derive_seed(self.seed, self.episodes))?);
        self.episodes += 1;

        for step in 0..self.config.steps_per_iteration {
            let action = select_action(&self.online, &obs, self.config.epsilon, &mut self.epsilon_rng)?;
            let out = self.env.step(action)?;
            self.env_steps += 1;
            episode_steps += 1;
            episode_return += out.reward;
            arrived += out.arrived;
            arrived_loss += out.arrived_time_loss;
            let next: Arc<[f64]> = Arc::from(out.observation);
            let truncated = out.done || episode_steps >= self.config.max_episode_steps;
            let emitted = builder.push(Arc::clone(&obs), action, out.reward, &next, false);
            self.store(emitted);
            obs = next;

            if self.replay.len() >= self.config.min_replay_before_training && self.env_steps.is_multiple_of(self.config.update_period) {
                loss_sum += self.learn()?;
                losses += 1;
            }
            if self.env_steps.is_multiple_of(self.config.target_sync_period) {
                self.target = self.online.clone();
            }

            let last = step + 1 == self.config.steps_per_iteration;
            if truncated || last {
                let rest = builder.flush(&obs, false);
                self.store(rest);
                returns.push(episode_return);
                episode_return = 0.0;
                episode_steps = 0;
                if !last {
                    obs = Arc::from(self.env.reset(rng::derive_seed(self.seed, self.episodes))?);
                    self.episodes += 1;
                }
            }
        }

        self.iteration += 1;
        let mean = |sum: f64, n: f64| if n > 0.0 { sum / n } else { f64::NAN };
        Ok(LogRow {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return: mean(returns.iter().sum(), returns.len() as f64),
            mean_loss: mean(loss_sum, losses as f64),
            mean_time_loss: mean(arrived_loss, arrived as f64),
            wallclock_s: started.elapsed().as_secs_f64(),
        })
    }
}

/// Full training run. `on_iteration` sees every log row together with the
/// checkpoint taken after that iteration.
pub fn train<E: Environment, F>(env: E, config: TrainConfig, seed: u64, mut on_iteration: F) -> Result<(Mlp, Vec<LogRow>), TrainError>
where
    F: FnMut(&LogRow, &Checkpoint) -> Result<(), TrainError>,
{
    let mut trainer = Trainer::new(env, config, seed)?;
    let mut log = Vec::with_capacity(config.iterations as usize);
    for _ in 0..config.iterations {
        let row = trainer.run_iteration()?;
        on_iteration(&row, &trainer.checkpoint())?;
        log.push(row);
    }
    Ok((trainer.online, log))
}

/// Greedy controller backed by a trained Q-network. Keeps its own frame
/// stack, built exactly like the environment's observation.
#[derive(Debug, Clone)]
pub struct PolicyController {
    net: Mlp,
    depth: usize,
    stack: Option<FrameStack>,
}

impl PolicyController {
    pub fn new(net: Mlp, depth: usize) -> Self {
        Self { net, depth, stack: None }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        "policy"
    }

    fn reset(&mut self) {
        self.stack = None;
    }

    fn decide(&mut self, input: &ControlInput<'_>) -> ControllerCommand {
        let frame = FrameStack::frame(input.engine.current_phase, input.readings);
        match &mut self.stack {
            Some(stack) => stack.push(frame),
            None => self.stack = Some(FrameStack::new(self.depth, frame)),
        }
        let obs = self.stack.as_ref().expect("initialised").flatten();
        let q = self.net.forward(&obs).expect("policy width checked at load");
        ControllerCommand::switch_to(argmax(&q))
    }
}
