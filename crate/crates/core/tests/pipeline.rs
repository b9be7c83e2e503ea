//! End-to-end use of the public API: network documents, training on the real
//! environment, checkpoints, and evaluation of the resulting policy.

use std::sync::Arc;

use tlsim_core::agent::{Checkpoint, TrainConfig, Trainer};
use tlsim_core::env::{EnvConfig, Environment, TrafficEnv};
use tlsim_core::eval::{build_report, policy_for, run_cell, run_episode, ControllerSpec};
use tlsim_core::net::{builtin_archetypes, load_network};

#[test]
fn archetype_documents_round_trip() {
    for (name, net) in builtin_archetypes() {
        let text = net.to_json();
        let back = load_network(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(back.to_json(), text, "{name}");
        assert_eq!(back.name, name);
    }
}

#[test]
fn trained_checkpoint_drives_an_episode() {
    let (_, net) = builtin_archetypes().into_iter().find(|(n, _)| n == "three_arm_6phase").unwrap();
    let net = Arc::new(net);
    let config = EnvConfig::default();
    let env = TrafficEnv::new(Arc::clone(&net), config).unwrap();
    assert_eq!(env.action_count(), 6);
    let small = TrainConfig { iterations: 1, steps_per_iteration: 400, min_replay_before_training: 100, ..TrainConfig::default() };
    let mut trainer = Trainer::new(env, small, 3).unwrap();
    let row = trainer.run_iteration().unwrap();
    assert_eq!(row.env_steps, 400);
    assert!(row.mean_loss.is_finite());

    let bytes = trainer.checkpoint().to_bytes();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ckpt.header.env_steps, 400);
    let mut policy = policy_for(&ckpt, "memory", &net, &config).unwrap();
    let a = run_episode(&net, &mut policy, &config, 21, 600, None).unwrap();
    let b = run_episode(&net, &mut policy, &config, 21, 600, None).unwrap();
    assert_eq!(a, b, "reset must make episodes repeatable");
    assert_eq!(a.controller, "policy");
    assert_eq!(a.spawned, a.arrived + a.in_flight + a.teleports);
}

#[test]
fn baseline_report_without_policy_has_no_tests() {
    let (_, net) = builtin_archetypes().into_iter().next().unwrap();
    let net = Arc::new(net);
    let config = EnvConfig::default();
    let episodes: Vec<_> = ["fixed", "gap"]
        .iter()
        .flat_map(|c| {
            let spec = ControllerSpec::parse(c).unwrap();
            let net = Arc::clone(&net);
            (1..=2).map(move |s| run_cell(&net, &spec, &config, s, 400).unwrap())
        })
        .collect();
    let report = build_report(&episodes, &[1, 2]);
    assert_eq!(report.cells.len(), 2);
    assert!(report.tests.is_empty());
    assert!(report.to_csv().starts_with("controller,junction,seed,"));
}
