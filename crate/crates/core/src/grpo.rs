//! Reward decomposition and group-relative policy optimization.
//!
//! Every training step draws a batch of samples, rolls out `G` episodes per
//! sample under the current parameters, normalizes rewards within each group
//! and takes one ascent step on
//!
//! ```text
//! J(θ) = mean_i [ mean_t min(ρ_t Â_i, clip(ρ_t, 1-ε, 1+ε) Â_i) ]
//!        - β · mean_{visited s} KL(π_θ(·|s) ‖ π_ref(·|s))
//! ```
//!
//! with `ρ_t = π_θ(a_t|s_t) / π_old(a_t|s_t)` and `π_ref` the frozen initial
//! parameters.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, Label, Sample, ToolOutput, Trajectory};
use crate::error::{Error, Result};
use crate::orchestrator::{run_episode_traced, EpisodeConfig, EpisodeSeeds, Environment, Observation};
use crate::par::{self, ExecMode};
use crate::policy::network::{kl_and_dlogits, Forward, DEFAULT_A_EMIT, DEFAULT_HIDDEN, DEFAULT_TAU};
use crate::policy::{featurize, FeatureLayout, FeatureOptions, ParametricPolicy, PolicyParams};
use crate::rng::{self, derive_seed, Purpose};

pub const ANALYSIS_MIN_TOKENS: u32 = 10;
pub const ANALYSIS_PENALTY: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub r_analysis: f64,
    pub r_cost: f64,
    pub total: f64,
}

pub fn compute_reward(traj: &Trajectory, gt: Label, per_call_cost: f64) -> Result<RewardBreakdown> {
    let verdict = traj
        .final_verdict
        .ok_or_else(|| Error::Input(format!("trajectory for sample {} has no verdict", traj.sample_id)))?;
    let r_acc = if verdict == gt { 1.0 } else { -1.0 };
    let r_format = if traj.format_valid { 0.0 } else { -1.0 };
    let short = traj.steps.iter().any(|s| {
        matches!(s.action, Action::CallTool { .. }) && s.analysis_tokens < ANALYSIS_MIN_TOKENS
    });
    let r_analysis = if short { -ANALYSIS_PENALTY } else { 0.0 };
    let r_cost = -per_call_cost * traj.num_tool_calls() as f64;
    Ok(RewardBreakdown {
        r_acc,
        r_format,
        r_analysis,
        r_cost,
        total: r_acc + r_format + r_analysis + r_cost,
    })
}

/// `(r - mean) / (std + eps)` with the population standard deviation; all
/// zeros when the rewards are identical (the population std is then 0).
pub fn group_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

fn d_group_size() -> usize {
    8
}
fn d_clip() -> f64 {
    0.2
}
fn d_kl() -> f64 {
    0.001
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_adam_eps() -> f64 {
    1e-8
}
fn d_steps() -> usize {
    300
}
fn d_batch() -> usize {
    64
}
fn d_adv_eps() -> f64 {
    1e-8
}
fn d_hidden() -> usize {
    DEFAULT_HIDDEN
}
fn d_tau() -> f64 {
    DEFAULT_TAU
}
fn d_a_emit() -> u32 {
    DEFAULT_A_EMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_group_size")]
    pub group_size: usize,
    #[serde(default = "d_clip")]
    pub clip_eps: f64,
    #[serde(default = "d_kl")]
    pub kl_coef: f64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_batch")]
    pub samples_per_step: usize,
    #[serde(default = "d_adv_eps")]
    pub adv_eps: f64,
    /// Reserved; only 0 is accepted.
    #[serde(default)]
    pub entropy_coef: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_a_emit")]
    pub a_emit: u32,
    #[serde(default)]
    pub episode: EpisodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.samples_per_step == 0 || self.hidden == 0 {
            return bad("samples_per_step and hidden must be positive");
        }
        for (name, v) in [
            ("clip_eps", self.clip_eps),
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("adv_eps", self.adv_eps),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad("kl_coef must be non-negative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.entropy_coef != 0.0 {
            return bad("entropy_coef is reserved and must be 0");
        }
        self.episode.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn init_params(&self, layout: FeatureLayout) -> PolicyParams {
        PolicyParams::init(
            layout,
            self.hidden,
            self.tau,
            self.a_emit,
            derive_seed(self.seed, Purpose::Init, &[]),
        )
    }
}

/// First-order optimizer with bias-corrected adaptive moments, used for ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// `θ ← θ + lr · m̂ / (√v̂ + eps)`.
    pub fn ascend(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            theta[k] += self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One collected episode with everything the update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Index into the batch's sample list.
    pub sample: usize,
    pub trajectory: Trajectory,
    pub old_log_probs: Vec<f64>,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

/// Seeds for member `member` of the group rolled out for `sample` at `step`.
/// Members share the tool seed and differ in the policy seed.
pub fn rollout_seeds(train_seed: u64, step: u64, sample: &Sample, member: usize) -> EpisodeSeeds {
    EpisodeSeeds {
        tools: derive_seed(train_seed, Purpose::Rollout, &[step, sample.id]),
        policy: derive_seed(train_seed, Purpose::Policy, &[step, sample.id, member as u64]),
    }
}

/// Roll out `G` episodes per sample (sample-major order) and attach rewards
/// and group-relative advantages.
pub fn collect_rollouts(
    params: &PolicyParams,
    samples: &[Sample],
    env: &Environment<'_>,
    cfg: &TrainConfig,
    step: u64,
    mode: ExecMode,
) -> Result<Vec<Rollout>> {
    let g = cfg.group_size;
    let policy = ParametricPolicy::sampling(params);
    let mut rollouts = par::try_map_range(mode, samples.len() * g, |k| -> Result<Rollout> {
        let (si, member) = (k / g, k % g);
        let s = &samples[si];
        let ep = run_episode_traced(s, &policy, env, rollout_seeds(cfg.seed, step, s, member))
            .map_err(|e| Error::Episode {
                sample_id: s.id,
                source: Box::new(e),
            })?;
        let old_log_probs = ep
            .log_probs
            .iter()
            .map(|lp| lp.ok_or_else(|| Error::Input("rollout step without a log-probability".into())))
            .collect::<Result<Vec<f64>>>()?;
        let reward = compute_reward(&ep.trajectory, s.label, env.episode.per_call_cost)?;
        Ok(Rollout {
            sample: si,
            trajectory: ep.trajectory,
            old_log_probs,
            reward,
            advantage: 0.0,
        })
    })?;
    for group in rollouts.chunks_mut(g) {
        let rewards: Vec<f64> = group.iter().map(|r| r.reward.total).collect();
        for (r, a) in group.iter_mut().zip(group_advantages(&rewards, cfg.adv_eps)) {
            r.advantage = a;
        }
    }
    Ok(rollouts)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveStats {
    pub objective: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub num_states: usize,
}

struct TrajTerms {
    surrogate: f64,
    kl_sum: f64,
    clipped: usize,
    states: usize,
    grad_surrogate: Vec<f64>,
    grad_kl: Vec<f64>,
}

fn trajectory_terms(
    params: &PolicyParams,
    reference: &PolicyParams,
    rollout: &Rollout,
    sample: &Sample,
    env: &Environment<'_>,
    clip_eps: f64,
) -> Result<TrajTerms> {
    let n = params.theta.len();
    let mut t = TrajTerms {
        surrogate: 0.0,
        kl_sum: 0.0,
        clipped: 0,
        states: 0,
        grad_surrogate: vec![0.0; n],
        grad_kl: vec![0.0; n],
    };
    let steps = &rollout.trajectory.steps;
    let history: Vec<ToolOutput> = rollout.trajectory.tool_outputs().cloned().collect();
    let inv_len = 1.0 / steps.len() as f64;
    let adv = rollout.advantage;
    for (i, step) in steps.iter().enumerate() {
        let obs = Observation::new(
            sample.observed_tags,
            env.tag_sizes,
            env.profiles,
            &history[..i.min(history.len())],
            env.episode.max_rounds,
        );
        let state = featurize(&obs, FeatureOptions::default());
        let cur = Forward::new(params, &state)?;
        let idx = cur
            .index_of(step.action)
            .ok_or_else(|| Error::MaskedAction(step.action.to_string()))?;
        let ratio = (cur.log_probs[idx] - rollout.old_log_probs[i]).exp();
        let clipped_ratio = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        t.surrogate += inv_len * (ratio * adv).min(clipped_ratio * adv);
        if (ratio - 1.0).abs() > clip_eps {
            t.clipped += 1;
        }
        let active = if adv > 0.0 {
            ratio <= 1.0 + clip_eps
        } else {
            adv < 0.0 && ratio >= 1.0 - clip_eps
        };
        if active {
            let d = cur.dlogits_log_prob(idx, params.tau);
            cur.backward(params, &state, &d, inv_len * adv * ratio, &mut t.grad_surrogate);
        }
        let refd = Forward::new(reference, &state)?;
        let (kl, dkl) = kl_and_dlogits(&cur, &refd, params.tau);
        t.kl_sum += kl;
        cur.backward(params, &state, &dkl, 1.0, &mut t.grad_kl);
        t.states += 1;
    }
    Ok(t)
}

/// The GRPO objective over fixed rollouts and its exact gradient w.r.t. θ.
pub fn objective_and_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    rollouts: &[Rollout],
    samples: &[Sample],
    env: &Environment<'_>,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<(ObjectiveStats, Vec<f64>)> {
    if params.theta.len() != reference.theta.len() || params.features != reference.features {
        return Err(Error::Config("policy and reference parameters are incompatible".into()));
    }
    if rollouts.is_empty() {
        return Err(Error::Input("no rollouts".into()));
    }
    let terms = par::try_map(mode, rollouts, |_, r| {
        trajectory_terms(params, reference, r, &samples[r.sample], env, cfg.clip_eps)
    })?;
    let n = params.theta.len();
    let num_traj = rollouts.len() as f64;
    let num_states: usize = terms.iter().map(|t| t.states).sum();
    let s_scale = 1.0 / num_traj;
    let k_scale = -cfg.kl_coef / num_states as f64;
    let mut grad = vec![0.0; n];
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    for t in &terms {
        surrogate += t.surrogate;
        kl += t.kl_sum;
        clipped += t.clipped;
        for k in 0..n {
            grad[k] += s_scale * t.grad_surrogate[k] + k_scale * t.grad_kl[k];
        }
    }
    let surrogate = surrogate / num_traj;
    let kl = kl / num_states as f64;
    Ok((
        ObjectiveStats {
            objective: surrogate - cfg.kl_coef * kl,
            surrogate,
            kl,
            clip_frac: clipped as f64 / num_states as f64,
            num_states,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_adv: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub mean_len: f64,
    pub wallclock_ms: u64,
}

/// Collect rollouts for `samples`, then apply one optimizer step in place.
#[allow(clippy::too_many_arguments)]
pub fn grpo_step(
    params: &mut PolicyParams,
    reference: &PolicyParams,
    optimizer: &mut Adam,
    samples: &[Sample],
    env: &Environment<'_>,
    cfg: &TrainConfig,
    step: usize,
    mode: ExecMode,
) -> Result<StepStats> {
    let rollouts = collect_rollouts(params, samples, env, cfg, step as u64, mode)?;
    let (obj, grad) = objective_and_grad(params, reference, &rollouts, samples, env, cfg, mode)?;
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {k} is {} at step {step}",
            grad[k]
        )));
    }
    optimizer.ascend(&mut params.theta, &grad);
    let n = rollouts.len() as f64;
    Ok(StepStats {
        step,
        mean_reward: rollouts.iter().map(|r| r.reward.total).sum::<f64>() / n,
        mean_abs_adv: rollouts.iter().map(|r| r.advantage.abs()).sum::<f64>() / n,
        kl: obj.kl,
        clip_frac: obj.clip_frac,
        mean_len: rollouts.iter().map(|r| r.trajectory.steps.len() as f64).sum::<f64>() / n,
        wallclock_ms: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial: PolicyParams,
    pub params: PolicyParams,
    pub log: Vec<StepStats>,
}

/// Run `cfg.steps` GRPO steps on batches drawn without replacement from
/// `train`. Wall-clock timings are recorded only when `timing` is set, so
/// that logs are reproducible by default.
pub fn train(
    cfg: &TrainConfig,
    train: &[Sample],
    env: &Environment<'_>,
    mode: ExecMode,
    timing: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let layout = FeatureLayout::new(env.tag_sizes);
    let initial = cfg.init_params(layout);
    let mut params = initial.clone();
    let mut opt = Adam::from_config(params.theta.len(), cfg);
    let batch_size = cfg.samples_per_step.min(train.len());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let start = Instant::now();
        let mut rng = rng::stream(cfg.seed, Purpose::Batch, &[step as u64]);
        let batch: Vec<Sample> = index::sample(&mut rng, train.len(), batch_size)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();
        let mut stats = grpo_step(&mut params, &initial, &mut opt, &batch, env, cfg, step, mode)?;
        if timing {
            stats.wallclock_ms = start.elapsed().as_millis() as u64;
        }
        log.push(stats);
    }
    Ok(TrainOutcome {
        initial,
        params,
        log,
    })
}

pub fn render_train_log(log: &[StepStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in log {
        w.serialize(s)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
