//! Central finite-difference checks of the analytic policy gradients.

use rand::Rng;
use serde::Serialize;

use orchestra::grpo::{collect_rollouts, objective_and_grad, TrainConfig};
use orchestra::orchestrator::{run_episode_traced, EpisodeConfig, EpisodeSeeds, Environment};
use orchestra::par::ExecMode;
use orchestra::pipeline::{calibrate, Splits};
use orchestra::policy::network::{state_log_prob_and_grad, DEFAULT_HIDDEN};
use orchestra::policy::{featurize, FeatureLayout, FeatureOptions, ParametricPolicy, PolicyParams};
use orchestra::rng::{self, Purpose};
use orchestra::sim::Scenario;
use orchestra::Result;

pub const EPS: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;
pub const LOG_PROB_TOL: f64 = 1e-4;
pub const OBJECTIVE_TOL: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub configs: usize,
    pub log_prob_max_rel_err: f64,
    pub objective_max_rel_err: f64,
    pub passed: bool,
}

fn perturbed(layout: FeatureLayout, rng: &mut impl Rng) -> PolicyParams {
    let seed = rng.random();
    let tau = rng.random_range(0.5..2.0);
    let mut p = PolicyParams::init(layout, DEFAULT_HIDDEN, tau, 12, seed);
    let scale = rng.random_range(1.0..8.0);
    for w in &mut p.theta {
        *w *= scale;
    }
    p
}

fn fd<F: Fn(&PolicyParams) -> Result<f64>>(p: &PolicyParams, k: usize, f: F) -> Result<f64> {
    let mut plus = p.clone();
    plus.theta[k] += EPS;
    let mut minus = p.clone();
    minus.theta[k] -= EPS;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * EPS))
}

/// Check `log_prob_and_grad` on every state of a sampled episode and the
/// full objective on a two-tool registry, for `configs` random
/// configurations. Scenario tools 0 and 2 form the two-tool registry.
pub fn run(scenario: &Scenario, configs: usize, seed: u64) -> Result<GradcheckReport> {
    let splits = Splits::generate(scenario);
    let sizes = scenario.schema().sizes();
    let layout = FeatureLayout::new(sizes);
    let episode = EpisodeConfig::default();
    let registry = scenario.registry(None)?;
    let cal = calibrate(&registry, scenario, &splits.calib, 20, 0.1, ExecMode::Sequential)?;
    let env = Environment::new(&registry, &cal.profiles, sizes, episode)?;
    let small_mask: Vec<usize> = (0..registry.len()).step_by(2).take(2).collect();
    let small = scenario.registry(Some(&small_mask))?;
    let small_cal = calibrate(&small, scenario, &splits.calib, 20, 0.1, ExecMode::Sequential)?;
    let small_env = Environment::new(&small, &small_cal.profiles, sizes, episode)?;

    let mut lp_max: f64 = 0.0;
    let mut obj_max: f64 = 0.0;
    for c in 0..configs {
        let mut rng = rng::stream(seed, Purpose::GradCheck, &[c as u64]);
        let params = perturbed(layout, &mut rng);
        let sample = &splits.train[rng.random_range(0..splits.train.len())];
        let policy = ParametricPolicy::sampling(&params);
        let ep = run_episode_traced(sample, &policy, &env, EpisodeSeeds::shared(rng.random()))?;
        let outputs: Vec<_> = ep.trajectory.tool_outputs().cloned().collect();
        for (i, step) in ep.trajectory.steps.iter().enumerate() {
            let obs = env.observation(sample.observed_tags, &outputs[..i.min(outputs.len())]);
            let state = featurize(&obs, FeatureOptions::default());
            let (_, g) = state_log_prob_and_grad(&params, &state, step.action)?;
            for k in 0..g.len() {
                let n = fd(&params, k, |p| Ok(state_log_prob_and_grad(p, &state, step.action)?.0))?;
                lp_max = lp_max.max(rel_err(g[k], n));
            }
        }

        let cfg = TrainConfig {
            group_size: 4,
            kl_coef: 0.5,
            seed: rng.random(),
            ..TrainConfig::default()
        };
        let old = perturbed(layout, &mut rng);
        let reference = perturbed(layout, &mut rng);
        let reference = PolicyParams { tau: old.tau, ..reference };
        let start = rng.random_range(0..splits.train.len() - 4);
        let batch = &splits.train[start..start + 4];
        let rollouts = collect_rollouts(&old, batch, &small_env, &cfg, c as u64, ExecMode::Sequential)?;
        let mut current = old.clone();
        for w in &mut current.theta {
            *w += rng.random_range(-0.02..0.02);
        }
        let objective = |p: &PolicyParams| -> Result<f64> {
            Ok(objective_and_grad(p, &reference, &rollouts, batch, &small_env, &cfg, ExecMode::Sequential)?.0.objective)
        };
        let (_, g) = objective_and_grad(&current, &reference, &rollouts, batch, &small_env, &cfg, ExecMode::Sequential)?;
        for k in 0..g.len() {
            obj_max = obj_max.max(rel_err(g[k], fd(&current, k, objective)?));
        }
    }
    Ok(GradcheckReport {
        configs,
        log_prob_max_rel_err: lp_max,
        objective_max_rel_err: obj_max,
        passed: lp_max < LOG_PROB_TOL && obj_max < OBJECTIVE_TOL,
    })
}
