//! Rule-based reference policy built on the profiles' conflict hints.

use crate::baselines::majority_vote;
use crate::domain::Action;
use crate::error::Result;
use crate::orchestrator::{Decision, Observation, Policy};

use super::network::DEFAULT_A_EMIT;

/// Number of observed tag values for which `tool_id` holds a rank-1 hint.
fn hint_score(obs: &Observation<'_>, tool_id: usize) -> usize {
    let profile = &obs.profiles[tool_id];
    obs.observed_tags
        .tag_values()
        .iter()
        .filter(|&&t| profile.has_rank1_hint(t))
        .count()
}

fn best_callable(obs: &Observation<'_>) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for &i in obs.callable_tools() {
        let s = hint_score(obs, i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Call the best-hinted tool, stop as soon as every verdict agrees, otherwise
/// keep calling; stop with the majority once nothing is left to call.
pub fn heuristic_reference(obs: &Observation<'_>) -> Action {
    let first = obs.history.first().map(|o| o.verdict);
    if let Some(v) = first {
        if obs.history.iter().all(|o| o.verdict == v) {
            return Action::Stop { verdict: v };
        }
    }
    match best_callable(obs) {
        Some(tool_id) => Action::CallTool { tool_id },
        None => Action::Stop {
            verdict: majority_vote(obs.history),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicPolicy {
    pub a_emit: u32,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        HeuristicPolicy { a_emit: DEFAULT_A_EMIT }
    }
}

impl Policy for HeuristicPolicy {
    fn decide(&self, obs: &Observation<'_>, _seed: u64) -> Result<Decision> {
        Ok(Decision {
            action: heuristic_reference(obs),
            analysis_tokens: self.a_emit,
            log_prob: None,
        })
    }
}
