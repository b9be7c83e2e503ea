//! Held-out evaluation episodes and the comparison report.

pub mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Checkpoint, CheckpointError, PolicyController};
use crate::env::EnvConfig;
use crate::net::RoadNetwork;
use crate::sim::{SimError, Simulation};
use crate::tlc::{self, ControlInput, Controller, SignalEngineState, TlcError};

pub use stats::{spearman, summarize, welch_t_test, DistributionSummary, StatsError, WelchResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] TlcError),
    #[error("cannot read checkpoint {path}: {source}")]
    CheckpointIo { path: String, source: std::io::Error },
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: CheckpointError },
    #[error("checkpoint {path} expects {ckpt_actions} phases and {ckpt_inputs} inputs; junction `{network}` has {net_actions} phases and {net_inputs} inputs")]
    Mismatch { path: String, network: String, ckpt_actions: usize, ckpt_inputs: usize, net_actions: usize, net_inputs: usize },
    #[error("controller `{controller}` on `{junction}` with seed {seed}: {message}")]
    Cell { controller: String, junction: String, seed: u64, message: String },
}

/// Names a controller: a baseline (`fixed`, `gap`, `time`, `random`) or a
/// checkpoint (`policy:<path>`, where `{junction}` in the path is replaced by
/// the junction name).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerSpec {
    Baseline(String),
    Policy(String),
}

impl ControllerSpec {
    pub fn parse(text: &str) -> Result<Self, TlcError> {
        match text.strip_prefix("policy:") {
            Some(path) => Ok(Self::Policy(path.to_string())),
            None if ["fixed", "gap", "time", "random"].contains(&text) => Ok(Self::Baseline(text.to_string())),
            None => Err(TlcError::UnknownController(text.to_string())),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Baseline(name) => name.clone(),
            Self::Policy(_) => "policy".to_string(),
        }
    }

    pub fn is_policy(&self) -> bool {
        matches!(self, Self::Policy(_))
    }

    pub fn checkpoint_path(&self, junction: &str) -> Option<String> {
        match self {
            Self::Policy(p) => Some(p.replace("{junction}", junction)),
            Self::Baseline(_) => None,
        }
    }

    pub fn build(&self, network: &RoadNetwork, config: &EnvConfig, seed: u64) -> Result<Box<dyn Controller>, EvalError> {
        match self {
            Self::Baseline(name) => Ok(tlc::baseline(name, &config.tlc, seed)?),
            Self::Policy(_) => {
                let path = self.checkpoint_path(&network.name).expect("policy");
                let ckpt = load_checkpoint(Path::new(&path))?;
                Ok(Box::new(policy_for(&ckpt, &path, network, config)?))
            }
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, EvalError> {
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| EvalError::CheckpointIo { path: display.clone(), source })?;
    Checkpoint::from_bytes(&bytes).map_err(|source| EvalError::Checkpoint { path: display, source })
}

/// Greedy controller from a checkpoint, after checking it fits `network`.
pub fn policy_for(ckpt: &Checkpoint, path: &str, network: &RoadNetwork, config: &EnvConfig) -> Result<PolicyController, EvalError> {
    let net = ckpt.online_network().map_err(|source| EvalError::Checkpoint { path: path.to_string(), source })?;
    let frames = config.episode.frames;
    let inputs = frames * (1 + network.detectors.len());
    if net.output_width() != network.phase_count() || net.input_width() != inputs {
        return Err(EvalError::Mismatch {
            path: path.to_string(),
            network: network.name.clone(),
            ckpt_actions: net.output_width(),
            ckpt_inputs: net.input_width(),
            net_actions: network.phase_count(),
            net_inputs: inputs,
        });
    }
    Ok(PolicyController::new(net, frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub controller: String,
    pub junction: String,
    pub seed: u64,
    pub steps: u64,
    /// timeLoss of every vehicle that arrived within the horizon.
    pub time_loss: Vec<f64>,
    pub teleports: u64,
    pub spawned: u64,
    pub arrived: u64,
    /// Vehicles still in the network at the end and their partial timeLoss.
    pub in_flight: u64,
    pub in_flight_time_loss: f64,
}

/// One vehicle at the end of one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: u64,
    pub vehicle_id: u64,
    /// Lane id, or `:<connection>` while crossing the junction.
    pub lane: String,
    pub position: f64,
    pub speed: f64,
    pub time_loss: f64,
    pub waiting_time: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "step,vehicle_id,lane,position,speed,time_loss,waiting_time";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{},{}", self.step, self.vehicle_id, self.lane, self.position, self.speed, self.time_loss, self.waiting_time)
    }
}

/// Runs one evaluation episode. `trace` sees every vehicle after every step.
pub fn run_episode(
    network: &Arc<RoadNetwork>,
    controller: &mut dyn Controller,
    config: &EnvConfig,
    seed: u64,
    steps: u64,
    mut trace: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<EpisodeResult, EvalError> {
    let sim_config = crate::sim::SimConfig { rng_seed: seed, ..config.sim };
    let mut sim = Simulation::new(Arc::clone(network), sim_config)?;
    let mut engine = SignalEngineState::new(config.tlc.orange_duration);
    controller.reset();
    let dt = sim_config.dt;
    for _ in 0..steps {
        let command = {
            let state = sim.state();
            controller.decide(&ControlInput { engine: &engine, readings: &state.readings, sim: &sim, dt })
        };
        let signals = engine.step(command, network, dt)?;
        sim.step(&signals)?;
        if let Some(f) = trace.as_mut() {
            let s = sim.state();
            for v in &s.vehicles {
                f(&TraceRow {
                    step: s.step,
                    vehicle_id: v.id,
                    lane: sim.segment_name(v.segment),
                    position: v.position,
                    speed: v.speed,
                    time_loss: v.time_loss,
                    waiting_time: v.waiting_time,
                });
            }
        }
    }
    let s = sim.state();
    Ok(EpisodeResult {
        controller: controller.name().to_string(),
        junction: network.name.clone(),
        seed,
        steps,
        time_loss: s.arrivals.iter().map(|a| a.time_loss).collect(),
        teleports: s.teleported_total,
        spawned: s.spawned_total,
        arrived: s.arrived_total,
        in_flight: s.vehicles.len() as u64,
        in_flight_time_loss: s.vehicles.iter().map(|v| v.time_loss).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub summary: Option<DistributionSummary>,
    pub teleports: u64,
    pub arrived: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub controller: String,
    pub junction: String,
    pub per_seed: Vec<SeedSummary>,
    pub pooled: Option<DistributionSummary>,
    pub teleports: u64,
    pub arrived: u64,
    pub spawned: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub junction: String,
    pub reference: String,
    pub baseline: String,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub n_reference: usize,
    pub n_baseline: usize,
    pub underpowered: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub tests: Vec<TestRecord>,
    pub notes: Vec<String>,
}

/// Pools episodes into per-(controller, junction) cells and tests the
/// learned policy against every other controller on each junction. Cells
/// keep the order in which controllers and junctions first appear.
pub fn build_report(episodes: &[EpisodeResult], seeds: &[u64]) -> ComparisonReport {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&EpisodeResult>> = BTreeMap::new();
    for e in episodes {
        let key = (e.controller.clone(), e.junction.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(e);
    }
    let mut pooled_values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let cells: Vec<CellReport> = order
        .iter()
        .map(|key| {
            let mut list = groups[key].clone();
            list.sort_by_key(|e| e.seed);
            let pooled: Vec<f64> = list.iter().flat_map(|e| e.time_loss.iter().copied()).collect();
            let cell = CellReport {
                controller: key.0.clone(),
                junction: key.1.clone(),
                per_seed: list
                    .iter()
                    .map(|e| SeedSummary { seed: e.seed, summary: summarize(&e.time_loss).ok(), teleports: e.teleports, arrived: e.arrived })
                    .collect(),
                pooled: summarize(&pooled).ok(),
                teleports: list.iter().map(|e| e.teleports).sum(),
                arrived: list.iter().map(|e| e.arrived).sum(),
                spawned: list.iter().map(|e| e.spawned).sum(),
            };
            pooled_values.insert(key.clone(), pooled);
            cell
        })
        .collect();

    let underpowered = seeds.len() < 2;
    let mut tests = Vec::new();
    let mut junctions: Vec<&String> = Vec::new();
    for (_, j) in &order {
        if !junctions.contains(&j) {
            junctions.push(j);
        }
    }
    for junction in junctions {
        let here: Vec<&(String, String)> = order.iter().filter(|(_, j)| j == junction).collect();
        let Some(reference) = here.iter().find(|(c, _)| c == "policy") else { continue };
        let a = &pooled_values[*reference];
        for other in here.iter().filter(|k| k != &reference) {
            let b = &pooled_values[*other];
            let result = welch_t_test(a, b);
            tests.push(TestRecord {
                junction: junction.clone(),
                reference: reference.0.clone(),
                baseline: other.0.clone(),
                t: result.as_ref().ok().map(|r| r.t),
                df: result.as_ref().ok().map(|r| r.df),
                p: result.as_ref().ok().map(|r| r.p),
                n_reference: a.len(),
                n_baseline: b.len(),
                underpowered,
                error: result.err().map(|e| e.to_string()),
            });
        }
    }

    let mut notes = Vec::new();
    if underpowered && !tests.is_empty() {
        notes.push("single seed: each t-test compares per-vehicle samples from one episode per controller and is underpowered".to_string());
    }
    if tests.len() > 1 {
        notes.push(format!("{} t-tests reported without correction for multiple comparisons", tests.len()));
    }
    ComparisonReport { seeds: seeds.to_vec(), cells, tests, notes }
}

/// Runs every (junction, controller, seed) episode serially and builds the report.
pub fn compare_matrix(
    networks: &[Arc<RoadNetwork>],
    controllers: &[ControllerSpec],
    seeds: &[u64],
    config: &EnvConfig,
    steps: u64,
) -> Result<ComparisonReport, EvalError> {
    let mut episodes = Vec::new();
    for network in networks {
        for spec in controllers {
            for &seed in seeds {
                episodes.push(run_cell(network, spec, config, seed, steps)?);
            }
        }
    }
    Ok(build_report(&episodes, seeds))
}

/// One episode, with failures tagged by their (controller, junction, seed).
pub fn run_cell(network: &Arc<RoadNetwork>, spec: &ControllerSpec, config: &EnvConfig, seed: u64, steps: u64) -> Result<EpisodeResult, EvalError> {
    let tag = |e: EvalError| EvalError::Cell { controller: spec.label(), junction: network.name.clone(), seed, message: e.to_string() };
    let mut controller = spec.build(network, config, seed).map_err(tag)?;
    run_episode(network, controller.as_mut(), config, seed, steps, None).map_err(tag)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str = "controller,junction,seed,n,mean,std,min,q1,median,q3,max,iqr,teleports";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let row = |out: &mut String, c: &CellReport, seed: &str, s: &Option<DistributionSummary>, teleports: u64| {
            let f = |g: fn(&DistributionSummary) -> f64| fmt_opt(s.as_ref().map(g));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.controller,
                c.junction,
                seed,
                s.as_ref().map_or(0, |s| s.n),
                f(|s| s.mean),
                f(|s| s.std),
                f(|s| s.min),
                f(|s| s.q1),
                f(|s| s.median),
                f(|s| s.q3),
                f(|s| s.max),
                f(|s| s.iqr),
                teleports
            );
        };
        for c in &self.cells {
            for s in &c.per_seed {
                row(&mut out, c, &s.seed.to_string(), &s.summary, s.teleports);
            }
            row(&mut out, c, "all", &c.pooled, c.teleports);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// One row per box (pooled cell) for external plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("junction,controller,n,min,q1,median,q3,max,mean,log_scale\n");
        for c in &self.cells {
            let s = c.pooled.as_ref();
            let f = |g: fn(&DistributionSummary) -> f64| fmt_opt(s.map(g));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},true",
                c.junction,
                c.controller,
                s.map_or(0, |s| s.n),
                f(|s| s.min),
                f(|s| s.q1),
                f(|s| s.median),
                f(|s| s.q3),
                f(|s| s.max),
                f(|s| s.mean)
            );
        }
        out
    }

    pub fn cell(&self, controller: &str, junction: &str) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.controller == controller && c.junction == junction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::builtin_archetype;

    fn network(name: &str) -> Arc<RoadNetwork> {
        Arc::new(builtin_archetype(name).unwrap())
    }

    fn episode(spec: &str, name: &str, seed: u64, spawn: f64) -> EpisodeResult {
        let mut config = EnvConfig::default();
        config.sim.spawn_probability = spawn;
        let net = network(name);
        let mut c = ControllerSpec::parse(spec).unwrap().build(&net, &config, seed).unwrap();
        run_episode(&net, c.as_mut(), &config, seed, 1200, None).unwrap()
    }

    #[test]
    fn no_traffic_no_samples() {
        let e = episode("fixed", "three_arm_4phase", 1, 0.0);
        assert!(e.time_loss.is_empty());
        assert_eq!(e.spawned, 0);
    }

    #[test]
    fn episodes_are_deterministic_and_controllers_differ() {
        let a = episode("fixed", "four_arm_8phase_regular", 3, 0.2);
        assert_eq!(a, episode("fixed", "four_arm_8phase_regular", 3, 0.2));
        let b = episode("gap", "four_arm_8phase_regular", 3, 0.2);
        assert_ne!(a.time_loss, b.time_loss);
        assert_eq!(a.time_loss.len() as u64, a.arrived);
        assert!(a.time_loss.iter().all(|&t| t >= 0.0));
        assert_eq!(a.spawned, a.arrived + a.teleports + a.in_flight);
    }

    #[test]
    fn report_counts_cells_and_tests() {
        let seeds = [1, 2];
        let mut episodes = Vec::new();
        for j in ["j1", "j2", "j3", "j4"] {
            for c in ["policy", "fixed", "gap", "time"] {
                for &seed in &seeds {
                    let base = seed as f64 + c.len() as f64;
                    episodes.push(EpisodeResult {
                        controller: c.into(),
                        junction: j.into(),
                        seed,
                        steps: 10,
                        time_loss: vec![base, base + 1.0, base + 3.0],
                        teleports: 0,
                        spawned: 3,
                        arrived: 3,
                        in_flight: 0,
                        in_flight_time_loss: 0.0,
                    });
                }
            }
        }
        let report = build_report(&episodes, &seeds);
        assert_eq!(report.cells.len(), 16);
        assert_eq!(report.tests.len(), 12);
        assert_eq!(report.cells.iter().map(|c| c.arrived).sum::<u64>(), episodes.iter().map(|e| e.arrived).sum::<u64>());
        // Pooled mean equals the vehicle-weighted mean of per-seed means.
        let cell = report.cell("gap", "j2").unwrap();
        let weighted: f64 = cell.per_seed.iter().map(|s| s.summary.unwrap().mean * s.summary.unwrap().n as f64).sum::<f64>()
            / cell.per_seed.iter().map(|s| s.summary.unwrap().n as f64).sum::<f64>();
        assert!((cell.pooled.unwrap().mean - weighted).abs() < 1e-12);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 16 * 3);
        assert!(csv.lines().nth(3).unwrap().starts_with("policy,j1,all,6,"));
        assert_eq!(report.plot_data().lines().count(), 17);
    }

    #[test]
    fn single_controller_has_no_tests_and_single_seed_is_flagged() {
        let e = episode("fixed", "three_arm_4phase", 1, 0.2);
        let report = build_report(std::slice::from_ref(&e), &[1]);
        assert_eq!((report.cells.len(), report.tests.len()), (1, 0));
        let mut p = e.clone();
        p.controller = "policy".into();
        let report = build_report(&[p, e], &[1]);
        assert_eq!(report.tests.len(), 1);
        assert!(report.tests[0].underpowered);
        assert!(report.notes[0].contains("underpowered"));
    }

    #[test]
    fn policy_template_and_errors() {
        let spec = ControllerSpec::parse("policy:runs/{junction}/final.ckpt").unwrap();
        assert_eq!(spec.checkpoint_path("three_arm_4phase").unwrap(), "runs/three_arm_4phase/final.ckpt");
        assert!(ControllerSpec::parse("webster").is_err());
        let net = network("three_arm_4phase");
        let err = ControllerSpec::parse("policy:/nonexistent/x.ckpt").unwrap().build(&net, &EnvConfig::default(), 0).err().unwrap();
        assert!(matches!(err, EvalError::CheckpointIo { .. }), "{err}");
    }
}
