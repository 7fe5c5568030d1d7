//! The parametric orchestration policy: featurizer, network, heuristic
//! reference and checkpoint format.

pub mod checkpoint;
pub mod features;
pub mod heuristic;
pub mod network;

pub use features::{featurize, FeatureLayout, FeatureOptions, StateFeatures};
pub use heuristic::{heuristic_reference, HeuristicPolicy};
pub use network::{
    action_distribution, log_prob_and_grad, sample_action, ActionDistribution, PolicyParams,
};

use crate::error::Result;
use crate::orchestrator::{Decision, Observation, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    #[default]
    Sample,
    Greedy,
}

/// [`PolicyParams`] wrapped as an orchestrator [`Policy`].
#[derive(Debug, Clone, Copy)]
pub struct ParametricPolicy<'a> {
    pub params: &'a PolicyParams,
    pub mode: DecodeMode,
    pub features: FeatureOptions,
}

impl<'a> ParametricPolicy<'a> {
    pub fn sampling(params: &'a PolicyParams) -> Self {
        ParametricPolicy {
            params,
            mode: DecodeMode::Sample,
            features: FeatureOptions::default(),
        }
    }

    pub fn greedy(params: &'a PolicyParams) -> Self {
        ParametricPolicy {
            params,
            mode: DecodeMode::Greedy,
            features: FeatureOptions::default(),
        }
    }

    pub fn with_features(mut self, features: FeatureOptions) -> Self {
        self.features = features;
        self
    }
}

impl Policy for ParametricPolicy<'_> {
    fn decide(&self, obs: &Observation<'_>, seed: u64) -> Result<Decision> {
        let d = network::distribution_for(self.params, &featurize(obs, self.features))?;
        let i = match self.mode {
            DecodeMode::Sample => d.sample_index(seed),
            DecodeMode::Greedy => d.argmax(),
        };
        Ok(Decision {
            action: d.actions[i],
            analysis_tokens: self.params.a_emit,
            log_prob: Some(d.log_probs[i]),
        })
    }
}
