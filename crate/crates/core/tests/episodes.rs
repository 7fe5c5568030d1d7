mod common;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orchestra::domain::{read_jsonl, write_jsonl, Action, Label, Trajectory};
use orchestra::orchestrator::{
    run_batch, run_episode, Decision, EpisodeConfig, EpisodeSeeds, Environment, Observation, Policy,
};
use orchestra::par::ExecMode;
use orchestra::sim::ToolSpec;
use orchestra::Result;

/// Picks uniformly among every call and both stops, masked or not.
struct RandomPolicy {
    tools: usize,
}

impl Policy for RandomPolicy {
    fn decide(&self, _obs: &Observation<'_>, seed: u64) -> Result<Decision> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(0..self.tools + 2);
        let action = if k < self.tools {
            Action::CallTool { tool_id: k }
        } else if k == self.tools {
            Action::Stop { verdict: Label::Real }
        } else {
            Action::Stop { verdict: Label::Fake }
        };
        Ok(Decision {
            action,
            analysis_tokens: rng.random_range(0..20),
            log_prob: None,
        })
    }
}

fn violations(traj: &Trajectory, registry: &[ToolSpec], max_rounds: u32) -> Vec<String> {
    let mut v = Vec::new();
    let mut seen = HashSet::new();
    let mut calls = 0;
    if traj.final_verdict.is_none() {
        v.push("no verdict".to_string());
    }
    for (i, step) in traj.steps.iter().enumerate() {
        if step.round != i as u32 + 1 {
            v.push(format!("round {} at position {i}", step.round));
        }
        match (step.action, &step.tool_output) {
            (Action::CallTool { tool_id }, Some(out)) => {
                calls += 1;
                if !seen.insert(tool_id) {
                    v.push(format!("tool {tool_id} called twice"));
                }
                if tool_id >= registry.len() || out.tool_id != tool_id || out.round != step.round {
                    v.push(format!("bad output for tool {tool_id}"));
                }
                if out.confidence.is_some() != registry[tool_id].emits_confidence {
                    v.push(format!("confidence format of tool {tool_id}"));
                }
                if out.confidence.is_some_and(|c| !(0.0..=1.0).contains(&c)) {
                    v.push("confidence out of range".to_string());
                }
            }
            (Action::Stop { verdict }, None) => {
                if i + 1 != traj.steps.len() {
                    v.push("stop before the last step".to_string());
                }
                if traj.final_verdict != Some(verdict) {
                    v.push("verdict differs from stop".to_string());
                }
            }
            _ => v.push(format!("output presence mismatch at step {i}")),
        }
    }
    if calls > max_rounds as usize {
        v.push(format!("{calls} calls with max_rounds {max_rounds}"));
    }
    v
}

#[test]
fn random_policy_never_breaks_trajectory_invariants() {
    let scenario = common::small(7, 500);
    let (splits, cal) = common::calibrated(&scenario);
    let registry = scenario.registry(None).unwrap();
    let envs: Vec<Environment> = (1..=6)
        .map(|r| {
            let episode = EpisodeConfig {
                max_rounds: r,
                ..EpisodeConfig::default()
            };
            Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), episode).unwrap()
        })
        .collect();
    let policy = RandomPolicy { tools: registry.len() };
    let mut forced = 0;
    for i in 0..100_000u64 {
        let sample = &splits.train[i as usize % splits.train.len()];
        let env = &envs[i as usize % envs.len()];
        let traj = run_episode(sample, &policy, env, EpisodeSeeds::shared(i)).unwrap();
        let v = violations(&traj, &registry, env.episode.max_rounds);
        assert!(v.is_empty(), "episode {i}: {v:?}");
        if !matches!(traj.steps.last().map(|s| s.action), Some(Action::Stop { .. })) {
            forced += 1;
        }
    }
    assert!(forced > 0, "forced conclusion never exercised");
}

#[test]
fn batch_equals_individual_runs() {
    let scenario = common::small(3, 50);
    let (splits, cal) = common::calibrated(&scenario);
    let registry = scenario.registry(None).unwrap();
    let env = Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), EpisodeConfig::default()).unwrap();
    let policy = RandomPolicy { tools: registry.len() };
    let two = &splits.eval[..2];
    let batch = run_batch(two, &policy, &env, |s| EpisodeSeeds::shared(s.id * 31), ExecMode::Parallel).unwrap();
    for (s, t) in two.iter().zip(&batch) {
        assert_eq!(&run_episode(s, &policy, &env, EpisodeSeeds::shared(s.id * 31)).unwrap(), t);
    }
}

#[test]
fn serial_and_parallel_batches_write_identical_logs() {
    let scenario = common::small(11, 1000);
    let (splits, cal) = common::calibrated(&scenario);
    let registry = scenario.registry(None).unwrap();
    let env = Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), EpisodeConfig::default()).unwrap();
    let policy = RandomPolicy { tools: registry.len() };
    let log = |mode| {
        let trajs = run_batch(&splits.eval, &policy, &env, |s| EpisodeSeeds::shared(s.id), mode).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &trajs).unwrap();
        (trajs, buf)
    };
    let (trajs, serial) = log(ExecMode::Sequential);
    let (_, parallel) = log(ExecMode::Parallel);
    assert_eq!(trajs.len(), 1000);
    assert_eq!(serial, parallel);

    let back: Vec<Trajectory> = read_jsonl(serial.as_slice()).unwrap();
    assert_eq!(back, trajs);
}
