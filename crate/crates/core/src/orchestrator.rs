//! The episode loop.
//!
//! Each round the policy receives a fresh [`Observation`] (observed tags,
//! profiles, the outputs collected so far) and either calls an uncalled tool
//! or stops with a verdict. A tool output extends the context by exactly one
//! history entry. The first action must be a tool call; after `max_rounds`
//! calls only stopping is possible. A policy that insists on a masked call
//! (a repeated tool, or any call past the budget) ends the episode with a
//! forced majority-vote conclusion and an invalid format flag.

use serde::{Deserialize, Serialize};

use crate::baselines::majority_vote;
use crate::domain::{
    validate_trajectory, Action, Sample, TagVector, ToolOutput, Trajectory, TrajectoryStep,
};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::profile::ToolProfile;
use crate::rng::{derive_seed, Purpose};
use crate::sim::{invoke_tool, ToolSpec};

fn default_max_rounds() -> u32 {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_true")]
    pub force_conclude_on_budget: bool,
    #[serde(default)]
    pub per_call_cost: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_rounds: default_max_rounds(),
            force_conclude_on_budget: true,
            per_call_cost: 0.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if !(self.per_call_cost >= 0.0 && self.per_call_cost.is_finite()) {
            return Err(Error::Config("per_call_cost must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

/// What the policy may look at. There is deliberately no label and no true
/// tag in here.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub observed_tags: TagVector,
    pub tag_sizes: [usize; 3],
    pub profiles: &'a [ToolProfile],
    pub history: &'a [ToolOutput],
    pub round: u32,
    pub max_rounds: u32,
    pub uncalled_tools: Vec<usize>,
}

impl<'a> Observation<'a> {
    /// The state at `round = history.len() + 1`.
    pub fn new(
        observed_tags: TagVector,
        tag_sizes: [usize; 3],
        profiles: &'a [ToolProfile],
        history: &'a [ToolOutput],
        max_rounds: u32,
    ) -> Self {
        let uncalled_tools = (0..profiles.len())
            .filter(|i| history.iter().all(|o| o.tool_id != *i))
            .collect();
        Observation {
            observed_tags,
            tag_sizes,
            profiles,
            history,
            round: history.len() as u32 + 1,
            max_rounds,
            uncalled_tools,
        }
    }

    pub fn registry_size(&self) -> usize {
        self.profiles.len()
    }

    /// Tools that may be called this round.
    pub fn callable_tools(&self) -> &[usize] {
        if self.round > self.max_rounds {
            &[]
        } else {
            &self.uncalled_tools
        }
    }

    pub fn stop_allowed(&self) -> bool {
        self.round > 1
    }

    pub fn is_allowed(&self, action: Action) -> bool {
        match action {
            Action::CallTool { tool_id } => self.callable_tools().contains(&tool_id),
            Action::Stop { .. } => self.stop_allowed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub analysis_tokens: u32,
    /// Log-probability of `action` under the deciding policy, when it has one.
    pub log_prob: Option<f64>,
}

/// Anything that can pick the next action. Implementations must be pure in
/// `(obs, seed)`.
pub trait Policy: Sync {
    fn decide(&self, obs: &Observation<'_>, seed: u64) -> Result<Decision>;
}

/// Everything an episode needs besides the sample and the policy.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub registry: &'a [ToolSpec],
    pub profiles: &'a [ToolProfile],
    pub tag_sizes: [usize; 3],
    pub episode: EpisodeConfig,
}

impl<'a> Environment<'a> {
    pub fn new(
        registry: &'a [ToolSpec],
        profiles: &'a [ToolProfile],
        tag_sizes: [usize; 3],
        episode: EpisodeConfig,
    ) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::Config("tool registry is empty".into()));
        }
        if registry.len() != profiles.len()
            || registry
                .iter()
                .zip(profiles)
                .enumerate()
                .any(|(i, (t, p))| t.tool_id != i || p.tool_id != i)
        {
            return Err(Error::Config(
                "profiles are not aligned with the tool registry".into(),
            ));
        }
        episode.validate()?;
        Ok(Environment {
            registry,
            profiles,
            tag_sizes,
            episode,
        })
    }

    pub fn observation<'b>(&self, tags: TagVector, history: &'b [ToolOutput]) -> Observation<'b>
    where
        'a: 'b,
    {
        Observation::new(tags, self.tag_sizes, self.profiles, history, self.episode.max_rounds)
    }
}

/// Seeds for the two independent sources of randomness in an episode.
/// Group members in training share `tools` and differ in `policy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub tools: u64,
    pub policy: u64,
}

impl EpisodeSeeds {
    pub fn shared(seed: u64) -> Self {
        EpisodeSeeds {
            tools: seed,
            policy: derive_seed(seed, Purpose::Policy, &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// Per-step log-probabilities reported by the policy (aligned with steps).
    pub log_probs: Vec<Option<f64>>,
}

pub fn run_episode(
    sample: &Sample,
    policy: &dyn Policy,
    env: &Environment<'_>,
    seeds: EpisodeSeeds,
) -> Result<Trajectory> {
    run_episode_traced(sample, policy, env, seeds).map(|e| e.trajectory)
}

pub fn run_episode_traced(
    sample: &Sample,
    policy: &dyn Policy,
    env: &Environment<'_>,
    seeds: EpisodeSeeds,
) -> Result<Episode> {
    let max_rounds = env.episode.max_rounds;
    let mut steps = Vec::new();
    let mut outputs: Vec<ToolOutput> = Vec::new();
    let mut log_probs = Vec::new();
    let mut called = vec![false; env.registry.len()];

    for round in 1..=max_rounds + 1 {
        let obs = env.observation(sample.observed_tags, &outputs);
        debug_assert_eq!(obs.round, round);
        let decision = policy.decide(&obs, derive_seed(seeds.policy, Purpose::Policy, &[round as u64]))?;
        match decision.action {
            Action::Stop { verdict } => {
                steps.push(TrajectoryStep {
                    round,
                    action: decision.action,
                    analysis_tokens: decision.analysis_tokens,
                    tool_output: None,
                });
                log_probs.push(decision.log_prob);
                let mut trajectory = Trajectory {
                    sample_id: sample.id,
                    steps,
                    final_verdict: Some(verdict),
                    format_valid: false,
                };
                trajectory.format_valid = validate_trajectory(&trajectory, env.registry.len());
                return Ok(Episode {
                    trajectory,
                    log_probs,
                });
            }
            Action::CallTool { tool_id } => {
                if tool_id >= env.registry.len() {
                    return Err(Error::ToolOutOfRange {
                        tool_id,
                        registry_size: env.registry.len(),
                    });
                }
                if called[tool_id] || round > max_rounds {
                    break;
                }
                called[tool_id] = true;
                let out = invoke_tool(&env.registry[tool_id], sample, seeds.tools, round);
                steps.push(TrajectoryStep {
                    round,
                    action: decision.action,
                    analysis_tokens: decision.analysis_tokens,
                    tool_output: Some(out.clone()),
                });
                log_probs.push(decision.log_prob);
                outputs.push(out);
            }
        }
    }

    if !env.episode.force_conclude_on_budget {
        return Err(Error::BudgetExhausted);
    }
    Ok(Episode {
        trajectory: Trajectory {
            sample_id: sample.id,
            steps,
            final_verdict: Some(majority_vote(&outputs)),
            format_valid: false,
        },
        log_probs,
    })
}

/// Element-wise [`run_episode`]; output order follows `samples` whatever the
/// execution mode.
pub fn run_batch<S>(
    samples: &[Sample],
    policy: &dyn Policy,
    env: &Environment<'_>,
    seeds: S,
    mode: ExecMode,
) -> Result<Vec<Trajectory>>
where
    S: Fn(&Sample) -> EpisodeSeeds + Sync + Send,
{
    par::try_map(mode, samples, |_, s| {
        run_episode(s, policy, env, seeds(s)).map_err(|e| Error::Episode {
            sample_id: s.id,
            source: Box::new(e),
        })
    })
}
