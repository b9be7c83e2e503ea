//! Single-junction traffic signal control testbed.
//!
//! * [`net`]: junction topology, conflict matrix, phase program, archetypes.
//! * [`sim`]: deterministic car-following simulation with per-vehicle metrics.
//! * [`detect`]: induction-loop detectors.
//! * [`tlc`]: signal engine with automatic orange clearing, baseline controllers.
//! * [`env`]: episodic control environment with stacked detector observations.
//! * [`agent`]: deep Q-learning agent (MLP, Adam, n-step replay).
//! * [`eval`]: evaluation episodes, distribution summaries, Welch tests.

pub mod agent;
pub mod detect;
pub mod env;
pub mod eval;
pub mod net;
pub mod rng;
pub mod sim;
pub mod tlc;
