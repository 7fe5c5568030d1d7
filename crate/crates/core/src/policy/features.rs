//! Observation featurizer.
//!
//! Layout (all entries in [0, 1]):
//!
//! ```text
//! global  = tag one-hots (sum of schema sizes, 10 by default)
//!         ⊕ history summary (8)
//! tool_i  = global ⊕ profile block (12) ⊕ called flag (1)
//! ```
//!
//! History summary: (round-1)/max_rounds, #fake/max_rounds, #real/max_rounds,
//! mean confidence, max confidence, last verdict one-hot (real, fake), last
//! confidence. Missing confidences read as 0.5.
//!
//! Profile block: overall accuracy level, bias one-hot (real, fake,
//! balanced), strength per metric (acc, fnr, fpr), weakness per metric,
//! rank-1 conflict-hint flag, lightweight flag. Strengths and weaknesses only
//! count entries whose tag matches the observed tags; a strength encodes how
//! good the matched level is and a weakness how bad, so an absent entry (0)
//! is never confused with a present one. Lightweight profiles leave the
//! strength/weakness/hint entries at zero.

use serde::{Deserialize, Serialize};

use crate::domain::{Label, TagDim};
use crate::orchestrator::Observation;
use crate::profile::{Metric, ToolProfile};

pub const HISTORY_DIM: usize = 8;
pub const PROFILE_DIM: usize = 12;
pub const TOOL_BLOCK_DIM: usize = PROFILE_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub tag_sizes: [usize; 3],
}

impl FeatureLayout {
    pub fn new(tag_sizes: [usize; 3]) -> Self {
        FeatureLayout { tag_sizes }
    }

    pub fn tag_dim(&self) -> usize {
        self.tag_sizes.iter().sum()
    }

    pub fn global_dim(&self) -> usize {
        self.tag_dim() + HISTORY_DIM
    }

    pub fn tool_input_dim(&self) -> usize {
        self.global_dim() + TOOL_BLOCK_DIM
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureOptions {
    /// Zero every profile block (the "no tool profile" ablation).
    pub zero_profiles: bool,
}

/// A featurized decision state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub global: Vec<f64>,
    /// Callable tool ids, in ascending order.
    pub candidates: Vec<usize>,
    /// One scorer input (global ⊕ tool block) per candidate.
    pub tool_inputs: Vec<Vec<f64>>,
    pub stop_allowed: bool,
}

impl StateFeatures {
    pub fn num_actions(&self) -> usize {
        self.candidates.len() + if self.stop_allowed { 2 } else { 0 }
    }
}

pub fn global_features(obs: &Observation<'_>) -> Vec<f64> {
    let layout = FeatureLayout::new(obs.tag_sizes);
    let mut g = Vec::with_capacity(layout.global_dim());
    for dim in TagDim::ALL {
        let n = obs.tag_sizes[dim.index()];
        let v = obs.observed_tags.get(dim) as usize;
        g.extend((0..n).map(|k| if k == v { 1.0 } else { 0.0 }));
    }
    let max_rounds = obs.max_rounds.max(1) as f64;
    let fakes = obs.history.iter().filter(|o| o.verdict == Label::Fake).count() as f64;
    let reals = obs.history.len() as f64 - fakes;
    let confs: Vec<f64> = obs.history.iter().filter_map(|o| o.confidence).collect();
    let mean_conf = if confs.is_empty() {
        0.5
    } else {
        confs.iter().sum::<f64>() / confs.len() as f64
    };
    let max_conf = confs.iter().copied().reduce(f64::max).unwrap_or(0.5);
    g.push(((obs.round as f64 - 1.0) / max_rounds).min(1.0));
    g.push((fakes / max_rounds).min(1.0));
    g.push((reals / max_rounds).min(1.0));
    g.push(mean_conf);
    g.push(max_conf);
    match obs.history.last() {
        Some(last) => {
            g.push(if last.verdict == Label::Real { 1.0 } else { 0.0 });
            g.push(if last.verdict == Label::Fake { 1.0 } else { 0.0 });
            g.push(last.confidence.unwrap_or(0.5));
        }
        None => g.extend([0.0, 0.0, 0.5]),
    }
    g
}

pub fn profile_block(profile: &ToolProfile, obs: &Observation<'_>) -> [f64; PROFILE_DIM] {
    let mut b = [0.0; PROFILE_DIM];
    b[0] = profile.overall.accuracy.ordinal();
    b[1 + profile.overall.bias.index()] = 1.0;
    if profile.lightweight {
        b[11] = 1.0;
        return b;
    }
    let tags = obs.observed_tags;
    for e in profile.strengths.iter().filter(|e| tags.contains(e.tag)) {
        let slot = &mut b[4 + e.metric.index()];
        *slot = slot.max(e.metric.goodness(e.level));
    }
    for e in profile.weaknesses.iter().filter(|e| tags.contains(e.tag)) {
        let slot = &mut b[7 + e.metric.index()];
        *slot = slot.max(1.0 - e.metric.goodness(e.level));
    }
    if tags.tag_values().iter().any(|&t| profile.has_rank1_hint(t)) {
        b[10] = 1.0;
    }
    debug_assert!(Metric::ALL.len() == 3);
    b
}

pub fn featurize(obs: &Observation<'_>, opts: FeatureOptions) -> StateFeatures {
    let global = global_features(obs);
    let candidates = obs.callable_tools().to_vec();
    let tool_inputs = candidates
        .iter()
        .map(|&i| {
            let mut x = Vec::with_capacity(global.len() + TOOL_BLOCK_DIM);
            x.extend_from_slice(&global);
            if opts.zero_profiles {
                x.extend([0.0; PROFILE_DIM]);
            } else {
                x.extend(profile_block(&obs.profiles[i], obs));
            }
            let called = obs.history.iter().any(|o| o.tool_id == i);
            x.push(if called { 1.0 } else { 0.0 });
            x
        })
        .collect();
    StateFeatures {
        global,
        candidates,
        tool_inputs,
        stop_allowed: obs.stop_allowed(),
    }
}
