//! `tlsim`: validate networks, run episodes, train agents, compare controllers.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tlsim_core::agent::{Checkpoint, LogRow, TrainError, Trainer};
use tlsim_core::env::TrafficEnv;
use tlsim_core::eval::{self, build_report, run_cell, run_episode, summarize, ControllerSpec, EvalError, TraceRow};
use tlsim_core::net::{builtin_archetype, load_network, NetError, RoadNetwork, ARCHETYPE_NAMES};

use config::{file_input, Manifest, NetworkSource, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Domain(_) => 1,
            Self::Io(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::CheckpointIo { .. } => Self::Io(e.to_string()),
            other => Self::Domain(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "tlsim", version, about = "Single-junction traffic-light control testbed")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment seed [default: 0, or the config file's]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file; a manifest from an earlier run also works
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for `compare` [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only print errors
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Override any config value, e.g. `--set env.sim.spawn_probability=0.3`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file; exit 0 iff it loads
    Validate { path: PathBuf },
    /// Run one evaluation episode
    Simulate {
        /// Built-in archetype name or network file
        #[arg(long)]
        net: Option<String>,
        /// fixed, gap, time, random or policy:<checkpoint>
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        /// Write a per-vehicle, per-step trace.csv
        #[arg(long)]
        trace: bool,
    },
    /// Train a Q-network controller
    Train {
        #[arg(long)]
        net: Option<String>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        steps_per_iteration: Option<u64>,
        /// Continue from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate controllers × junctions × seeds and test against the policy
    Compare {
        /// Comma-separated archetype names or network files
        #[arg(long, value_delimiter = ',')]
        nets: Option<Vec<String>>,
        /// Comma-separated; `{junction}` in a policy path is substituted
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<String>>,
        /// Comma-separated [default: the five seeds starting at --seed]
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Built-in junction archetypes
    Archetypes {
        #[command(subcommand)]
        action: ArchetypeAction,
    },
}

#[derive(Subcommand)]
enum ArchetypeAction {
    List,
    /// Print one archetype as JSON, or write all of them into --out
    Dump {
        name: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

struct Ctx {
    config: RunConfig,
    layer: config::FileLayer,
    seed: u64,
    out: PathBuf,
    jobs: Option<usize>,
    quiet: bool,
    started: Instant,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn input<T: for<'de> serde::Deserialize<'de>>(&self, command: &str, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => file_input(&self.layer, command, key),
        }
    }

    fn manifest(&self, command: &str, inputs: serde_json::Value, networks: Vec<NetworkSource>) -> Manifest {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            out: self.out.display().to_string(),
            inputs,
            networks,
            config: self.config,
            wallclock_s: self.started.elapsed().as_secs_f64(),
        }
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if let Command::Validate { path } = &cli.command {
        return validate(path, g.quiet);
    }
    let (config, layer) = config::load(g.config.as_deref(), &g.overrides)?;
    let ctx = Ctx { seed: g.seed.or(layer.seed).unwrap_or(0), config, layer, out: g.out, jobs: g.jobs, quiet: g.quiet, started: Instant::now() };
    match cli.command {
        Command::Validate { .. } => unreachable!(),
        Command::Simulate { net, controller, steps, trace } => simulate(&ctx, net, controller, steps, trace),
        Command::Train { net, iterations, steps_per_iteration, resume } => train(ctx, net, iterations, steps_per_iteration, resume),
        Command::Compare { nets, controllers, seeds, steps } => compare(&ctx, nets, controllers, seeds, steps),
        Command::Archetypes { action } => archetypes(&ctx, action),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn net_error(source: &str, e: NetError) -> CliError {
    CliError::Domain(format!("{source}: {e}"))
}

/// Resolves a built-in archetype name or reads and validates a network file.
fn load_net(source: &str) -> Result<(Arc<RoadNetwork>, NetworkSource), CliError> {
    let (net, text) = match builtin_archetype(source) {
        Some(net) => {
            let text = net.to_json();
            (net, text)
        }
        None => {
            let text = std::fs::read_to_string(source)
                .map_err(|e| CliError::Io(format!("cannot read network `{source}`: {e} (built-in archetypes: {})", ARCHETYPE_NAMES.join(", "))))?;
            (load_network(&text).map_err(|e| net_error(source, e))?, text)
        }
    };
    let meta = NetworkSource { source: source.to_string(), name: net.name.clone(), sha256: hex(&Sha256::digest(text.as_bytes())) };
    Ok((Arc::new(net), meta))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Domain(format!("missing {flag} (flag or config input)")))
}

fn parse_controller(text: &str) -> Result<ControllerSpec, CliError> {
    ControllerSpec::parse(text).map_err(|e| CliError::Domain(e.to_string()))
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    text.into_bytes()
}

fn validate(path: &Path, quiet: bool) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let net = load_network(&text).map_err(|e| net_error(&path.display().to_string(), e))?;
    if !quiet {
        println!(
            "ok: {} ({} lanes, {} connections, {} phases, {} detectors)",
            net.name,
            net.lanes.len(),
            net.connections.len(),
            net.phase_count(),
            net.detectors.len()
        );
    }
    Ok(())
}

fn simulate(ctx: &Ctx, net: Option<String>, controller: Option<String>, steps: Option<u64>, trace: bool) -> Result<(), CliError> {
    const CMD: &str = "simulate";
    let net_src: String = required(ctx.input(CMD, net, "net")?, "--net")?;
    let controller = ctx.input(CMD, controller, "controller")?.unwrap_or_else(|| "fixed".to_string());
    let steps = ctx.input(CMD, steps, "steps")?.unwrap_or(ctx.config.env.episode.max_steps);
    let trace = trace || ctx.input::<bool>(CMD, None, "trace")?.unwrap_or(false);
    let spec = parse_controller(&controller)?;
    let (network, meta) = load_net(&net_src)?;
    let mut ctl = spec.build(&network, &ctx.config.env, ctx.seed)?;
    let dir = ctx.out_dir()?;

    let mut trace_csv = String::new();
    let result = if trace {
        trace_csv.push_str(TraceRow::CSV_HEADER);
        trace_csv.push('\n');
        let mut sink = |row: &TraceRow| {
            trace_csv.push_str(&row.to_csv());
            trace_csv.push('\n');
        };
        run_episode(&network, ctl.as_mut(), &ctx.config.env, ctx.seed, steps, Some(&mut sink))?
    } else {
        run_episode(&network, ctl.as_mut(), &ctx.config.env, ctx.seed, steps, None)?
    };

    let summary = json!({
        "controller": result.controller,
        "junction": result.junction,
        "seed": result.seed,
        "steps": result.steps,
        "spawned": result.spawned,
        "arrived": result.arrived,
        "teleports": result.teleports,
        "in_flight": result.in_flight,
        "in_flight_time_loss": result.in_flight_time_loss,
        "time_loss": summarize(&result.time_loss).ok(),
    });
    write_file(&dir.join("episode.json"), &to_json_bytes(&result))?;
    write_file(&dir.join("summary.json"), &to_json_bytes(&summary))?;
    if trace {
        write_file(&dir.join("trace.csv"), trace_csv.as_bytes())?;
    }
    let inputs = json!({ "net": net_src, "controller": controller, "steps": steps, "trace": trace });
    ctx.manifest(CMD, inputs, vec![meta]).write(dir)?;
    let mean = eval::stats::mean(&result.time_loss);
    ctx.say(format!(
        "{} on {} (seed {}): {} arrived, mean timeLoss {}, {} teleports",
        result.controller,
        result.junction,
        result.seed,
        result.arrived,
        if result.time_loss.is_empty() { "n/a".to_string() } else { format!("{mean:.2} s") },
        result.teleports
    ));
    Ok(())
}

fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    write_file(path, &ckpt.to_bytes())
}

fn train(
    mut ctx: Ctx,
    net: Option<String>,
    iterations: Option<u64>,
    steps_per_iteration: Option<u64>,
    resume: Option<PathBuf>,
) -> Result<(), CliError> {
    const CMD: &str = "train";
    let net_src: String = required(ctx.input(CMD, net, "net")?, "--net")?;
    let resume: Option<PathBuf> = ctx.input(CMD, resume, "resume")?;
    if let Some(n) = iterations {
        ctx.config.train.iterations = n;
    }
    if let Some(n) = steps_per_iteration {
        ctx.config.train.steps_per_iteration = n;
    }
    let (network, meta) = load_net(&net_src)?;
    let env = TrafficEnv::new(Arc::clone(&network), ctx.config.env).map_err(|e| CliError::Domain(e.to_string()))?;

    let mut trainer = match &resume {
        None => Trainer::new(env, ctx.config.train, ctx.seed).map_err(|e| CliError::Domain(e.to_string()))?,
        Some(path) => {
            let ckpt = eval::load_checkpoint(path)?;
            // everything but the iteration budget comes from the checkpoint
            let mut train = ckpt.header.config;
            train.iterations = ctx.config.train.iterations;
            ctx.config.train = train;
            ctx.seed = ckpt.header.seed;
            Trainer::resume(env, &ckpt).map_err(|e| CliError::Domain(e.to_string()))?
        }
    };
    let dir = ctx.out_dir()?.to_path_buf();
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", ckpt_dir.display())))?;

    let mut log = String::from(LogRow::CSV_HEADER);
    log.push('\n');
    let start_iteration = trainer.iteration();
    while trainer.iteration() < ctx.config.train.iterations {
        let row = match trainer.run_iteration() {
            Ok(row) => row,
            Err(TrainError::NonFinite { iteration, env_steps, checkpoint }) => {
                let path = dir.join("diagnostic.tlqn");
                write_checkpoint(&path, &checkpoint)?;
                write_file(&dir.join("train.csv"), log.as_bytes())?;
                return Err(CliError::Numerical(format!(
                    "non-finite loss at iteration {}, env step {env_steps}; diagnostic checkpoint written to {}",
                    iteration + 1,
                    path.display()
                )));
            }
            Err(e) => return Err(CliError::Domain(e.to_string())),
        };
        write_checkpoint(&ckpt_dir.join(format!("iter_{:04}.tlqn", row.iteration)), &trainer.checkpoint())?;
        log.push_str(&row.to_csv());
        log.push('\n');
        ctx.progress(format!(
            "iteration {}/{}: return {:.2}, loss {:.5}, timeLoss {:.2} s",
            row.iteration, ctx.config.train.iterations, row.mean_return, row.mean_loss, row.mean_time_loss
        ));
    }
    let final_path = dir.join("final.tlqn");
    write_checkpoint(&final_path, &trainer.checkpoint())?;
    write_file(&dir.join("train.csv"), log.as_bytes())?;
    let inputs = json!({ "net": net_src, "resume": resume.as_ref().map(|p| p.display().to_string()) });
    ctx.manifest(CMD, inputs, vec![meta]).write(&dir)?;
    ctx.say(format!(
        "trained {} iteration(s) ({} env steps); final checkpoint {}",
        trainer.iteration() - start_iteration,
        trainer.env_steps(),
        final_path.display()
    ));
    Ok(())
}

fn compare(
    ctx: &Ctx,
    nets: Option<Vec<String>>,
    controllers: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    steps: Option<u64>,
) -> Result<(), CliError> {
    const CMD: &str = "compare";
    let net_srcs: Vec<String> = required(ctx.input(CMD, nets, "nets")?, "--nets")?;
    let ctl_names: Vec<String> =
        ctx.input(CMD, controllers, "controllers")?.unwrap_or_else(|| ["fixed", "gap", "time", "random"].map(String::from).to_vec());
    let seeds: Vec<u64> = ctx.input(CMD, seeds, "seeds")?.unwrap_or_else(|| (0..5).map(|i| ctx.seed + i).collect());
    let steps = ctx.input(CMD, steps, "steps")?.unwrap_or(ctx.config.env.episode.max_steps);
    if seeds.is_empty() || net_srcs.is_empty() || ctl_names.is_empty() {
        return Err(CliError::Domain("compare needs at least one network, controller and seed".into()));
    }
    let specs = ctl_names.iter().map(|c| parse_controller(c)).collect::<Result<Vec<_>, _>>()?;
    let mut networks = Vec::new();
    let mut metas = Vec::new();
    for src in &net_srcs {
        let (n, m) = load_net(src)?;
        networks.push(n);
        metas.push(m);
    }
    // fail fast on unreadable or mismatched checkpoints before any episode runs
    for spec in specs.iter().filter(|s| s.is_policy()) {
        for net in &networks {
            spec.build(net, &ctx.config.env, seeds[0])?;
        }
    }

    let mut cells = Vec::with_capacity(networks.len() * specs.len() * seeds.len());
    for n in 0..networks.len() {
        for c in 0..specs.len() {
            cells.extend(seeds.iter().map(|&s| (n, c, s)));
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = ctx.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Domain(format!("thread pool: {e}")))?;
    ctx.progress(format!("running {} episodes", cells.len()));
    let results: Vec<Result<_, EvalError>> =
        pool.install(|| cells.par_iter().map(|&(n, c, s)| run_cell(&networks[n], &specs[c], &ctx.config.env, s, steps)).collect());
    // first failure in matrix order, not in completion order
    let episodes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = build_report(&episodes, &seeds);

    let dir = ctx.out_dir()?;
    write_file(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_file(&dir.join("plot.json"), report.plot_data().as_bytes())?;
    let inputs = json!({ "nets": net_srcs, "controllers": ctl_names, "seeds": seeds, "steps": steps });
    ctx.manifest(CMD, inputs, metas).write(dir)?;

    if !ctx.quiet {
        for cell in &report.cells {
            match &cell.pooled {
                Some(d) => {
                    println!("{:28} {:8} mean timeLoss {:8.2} s  median {:8.2} s  n={}", cell.junction, cell.controller, d.mean, d.median, d.n)
                }
                None => println!("{:28} {:8} no arrivals", cell.junction, cell.controller),
            }
        }
        for t in &report.tests {
            match t.p {
                Some(p) => println!("{} {} vs {}: t={:.3} p={:.3e}", t.junction, t.reference, t.baseline, t.t.unwrap_or(f64::NAN), p),
                None => println!("{} {} vs {}: {}", t.junction, t.reference, t.baseline, t.error.as_deref().unwrap_or("not testable")),
            }
        }
        for note in &report.notes {
            println!("note: {note}");
        }
    }
    Ok(())
}

fn archetypes(ctx: &Ctx, action: ArchetypeAction) -> Result<(), CliError> {
    match action {
        ArchetypeAction::List => {
            for name in ARCHETYPE_NAMES {
                let net = builtin_archetype(name).expect("built-in");
                println!(
                    "{name:28} arms={} phases={} lanes={} detectors={}",
                    net.arm_count(),
                    net.phase_count(),
                    net.lanes.len(),
                    net.detectors.len()
                );
            }
            Ok(())
        }
        ArchetypeAction::Dump { name: Some(name) } => {
            let net = builtin_archetype(&name)
                .ok_or_else(|| CliError::Domain(format!("unknown archetype `{name}` (known: {})", ARCHETYPE_NAMES.join(", "))))?;
            println!("{}", net.to_json());
            Ok(())
        }
        ArchetypeAction::Dump { name: None } => {
            let dir = ctx.out_dir()?;
            let mut metas = Vec::new();
            for name in ARCHETYPE_NAMES {
                let (net, meta) = load_net(name)?;
                write_file(&dir.join(format!("{name}.json")), format!("{}\n", net.to_json()).as_bytes())?;
                metas.push(meta);
            }
            ctx.manifest("archetypes", json!({ "action": "dump" }), metas).write(dir)?;
            ctx.say(format!("wrote {} archetypes to {}", ARCHETYPE_NAMES.len(), dir.display()));
            Ok(())
        }
    }
}
