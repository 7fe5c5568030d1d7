//! Parametric policy: a shared per-tool scorer and a two-logit stop head.
//!
//! ```text
//! score(tool i) = w2 · tanh(W1 x_i + b1) + b2        x_i = global ⊕ tool block
//! [stop(real), stop(fake)] = V2 tanh(V1 g + c1) + c2  g = global
//! π(a) = softmax(logits / τ) over the unmasked actions
//! ```
//!
//! The scorer's weights are shared across tools, so a registry of any size
//! (including tools never seen in training) can be scored.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureLayout, FeatureOptions, StateFeatures};
use crate::domain::{Action, Label};
use crate::error::{Error, Result};
use crate::orchestrator::Observation;
use crate::rng::{self, Purpose};

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_TAU: f64 = 1.0;
pub const DEFAULT_A_EMIT: u32 = 12;
pub const INIT_SCALE: f64 = 0.1;

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub tool_in: usize,
    pub global_in: usize,
    pub hidden: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub v1: usize,
    pub c1: usize,
    pub v2: usize,
    pub c2: usize,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(features: FeatureLayout, hidden: usize) -> Self {
        let tool_in = features.tool_input_dim();
        let global_in = features.global_dim();
        let w1 = 0;
        let b1 = w1 + hidden * tool_in;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        let v1 = b2 + 1;
        let c1 = v1 + hidden * global_in;
        let v2 = c1 + hidden;
        let c2 = v2 + 2 * hidden;
        ParamLayout {
            tool_in,
            global_in,
            hidden,
            w1,
            b1,
            w2,
            b2,
            v1,
            c1,
            v2,
            c2,
            len: c2 + 2,
        }
    }

    /// The output layers of both heads (w2, b2, V2, c2).
    pub fn is_output_layer(&self, k: usize) -> bool {
        (self.w2..self.v1).contains(&k) || (self.v2..self.len).contains(&k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub features: FeatureLayout,
    pub hidden: usize,
    pub tau: f64,
    pub a_emit: u32,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(features: FeatureLayout, hidden: usize, tau: f64, a_emit: u32) -> Self {
        let len = ParamLayout::new(features, hidden).len;
        PolicyParams {
            features,
            hidden,
            tau,
            a_emit,
            theta: vec![0.0; len],
        }
    }

    /// Uniform weights in [-0.1, 0.1] keyed by `seed`.
    pub fn init(features: FeatureLayout, hidden: usize, tau: f64, a_emit: u32, seed: u64) -> Self {
        let mut p = Self::zeros(features, hidden, tau, a_emit);
        let mut rng = rng::stream(seed, Purpose::Init, &[]);
        for w in &mut p.theta {
            *w = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        p
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.features, self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.theta.len() != self.layout().len {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layout needs {}",
                self.theta.len(),
                self.layout().len
            )));
        }
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(())
    }
}

/// Forward pass over one state, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub actions: Vec<Action>,
    /// Raw logits (before the temperature).
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    tool_hidden: Vec<Vec<f64>>,
    stop_hidden: Option<Vec<f64>>,
}

fn mlp_hidden(theta: &[f64], w: usize, b: usize, hidden: usize, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..hidden)
        .map(|j| {
            let row = &theta[w + j * n..w + (j + 1) * n];
            let a: f64 = row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + theta[b + j];
            a.tanh()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Forward {
    pub fn new(params: &PolicyParams, state: &StateFeatures) -> Result<Self> {
        let l = params.layout();
        let th = &params.theta;
        if state.global.len() != l.global_in
            || state.tool_inputs.iter().any(|x| x.len() != l.tool_in)
        {
            return Err(Error::Config(
                "feature dimensions do not match the policy parameters".into(),
            ));
        }
        let n_actions = state.num_actions();
        if n_actions == 0 {
            return Err(Error::NoActions);
        }
        let mut actions = Vec::with_capacity(n_actions);
        let mut logits = Vec::with_capacity(n_actions);
        let mut tool_hidden = Vec::with_capacity(state.candidates.len());
        for (&tool_id, x) in state.candidates.iter().zip(&state.tool_inputs) {
            let h = mlp_hidden(th, l.w1, l.b1, l.hidden, x);
            logits.push(dot(&th[l.w2..l.w2 + l.hidden], &h) + th[l.b2]);
            actions.push(Action::CallTool { tool_id });
            tool_hidden.push(h);
        }
        let stop_hidden = state.stop_allowed.then(|| {
            let h = mlp_hidden(th, l.v1, l.c1, l.hidden, &state.global);
            for (r, verdict) in [Label::Real, Label::Fake].into_iter().enumerate() {
                let row = &th[l.v2 + r * l.hidden..l.v2 + (r + 1) * l.hidden];
                logits.push(dot(row, &h) + th[l.c2 + r]);
                actions.push(Action::Stop { verdict });
            }
            h
        });
        let scaled: Vec<f64> = logits.iter().map(|z| z / params.tau).collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scaled.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = scaled.iter().map(|s| s - lse).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Forward {
            actions,
            logits,
            log_probs,
            probs,
            tool_hidden,
            stop_hidden,
        })
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|&a| a == action)
    }

    /// Accumulate `d/dθ` of a scalar whose gradient w.r.t. the raw logits is
    /// `dlogits`, scaled by `weight`.
    pub fn backward(
        &self,
        params: &PolicyParams,
        state: &StateFeatures,
        dlogits: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) {
        let l = params.layout();
        let th = &params.theta;
        let nc = state.candidates.len();
        for (k, (x, h)) in state.tool_inputs.iter().zip(&self.tool_hidden).enumerate() {
            let dz = dlogits[k] * weight;
            if dz == 0.0 {
                continue;
            }
            grad[l.b2] += dz;
            for j in 0..l.hidden {
                grad[l.w2 + j] += dz * h[j];
                let da = dz * th[l.w2 + j] * (1.0 - h[j] * h[j]);
                grad[l.b1 + j] += da;
                let row = &mut grad[l.w1 + j * l.tool_in..l.w1 + (j + 1) * l.tool_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += da * xi;
                }
            }
        }
        if let Some(h) = &self.stop_hidden {
            let dz = [dlogits[nc] * weight, dlogits[nc + 1] * weight];
            for j in 0..l.hidden {
                let mut dh = 0.0;
                for (r, &d) in dz.iter().enumerate() {
                    grad[l.v2 + r * l.hidden + j] += d * h[j];
                    dh += d * th[l.v2 + r * l.hidden + j];
                }
                let da = dh * (1.0 - h[j] * h[j]);
                grad[l.c1 + j] += da;
                let row = &mut grad[l.v1 + j * l.global_in..l.v1 + (j + 1) * l.global_in];
                for (g, xi) in row.iter_mut().zip(&state.global) {
                    *g += da * xi;
                }
            }
            grad[l.c2] += dz[0];
            grad[l.c2 + 1] += dz[1];
        }
    }

    /// Gradient of `log π(actions[idx])` w.r.t. the raw logits.
    pub fn dlogits_log_prob(&self, idx: usize, tau: f64) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(b, p)| ((b == idx) as u8 as f64 - p) / tau)
            .collect()
    }
}

/// Categorical distribution over the unmasked actions of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub actions: Vec<Action>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Probability of `action`; exactly 0 for masked actions.
    pub fn prob(&self, action: Action) -> f64 {
        self.actions
            .iter()
            .position(|&a| a == action)
            .map_or(0.0, |i| self.probs[i])
    }

    pub fn sample_index(&self, seed: u64) -> usize {
        let u: f64 = rng::stream(seed, Purpose::Policy, &[]).random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl From<Forward> for ActionDistribution {
    fn from(f: Forward) -> Self {
        ActionDistribution {
            actions: f.actions,
            probs: f.probs,
            log_probs: f.log_probs,
        }
    }
}

pub fn distribution_for(params: &PolicyParams, state: &StateFeatures) -> Result<ActionDistribution> {
    Forward::new(params, state).map(Into::into)
}

pub fn action_distribution(params: &PolicyParams, obs: &Observation<'_>) -> Result<ActionDistribution> {
    distribution_for(params, &featurize(obs, FeatureOptions::default()))
}

/// Draw an action. Returns the action, its log-probability and the analysis
/// token count the policy emits before acting.
pub fn sample_action(params: &PolicyParams, obs: &Observation<'_>, seed: u64) -> Result<(Action, f64, u32)> {
    let d = action_distribution(params, obs)?;
    let i = d.sample_index(seed);
    Ok((d.actions[i], d.log_probs[i], params.a_emit))
}

pub fn state_log_prob_and_grad(
    params: &PolicyParams,
    state: &StateFeatures,
    action: Action,
) -> Result<(f64, Vec<f64>)> {
    let f = Forward::new(params, state)?;
    let idx = f
        .index_of(action)
        .ok_or_else(|| Error::MaskedAction(action.to_string()))?;
    let mut grad = vec![0.0; params.theta.len()];
    f.backward(params, state, &f.dlogits_log_prob(idx, params.tau), 1.0, &mut grad);
    Ok((f.log_probs[idx], grad))
}

/// `log π(action | obs)` and its exact gradient w.r.t. every parameter.
pub fn log_prob_and_grad(params: &PolicyParams, obs: &Observation<'_>, action: Action) -> Result<(f64, Vec<f64>)> {
    state_log_prob_and_grad(params, &featurize(obs, FeatureOptions::default()), action)
}

/// Exact KL(p ‖ q) between two distributions over the same action list, and
/// its gradient w.r.t. p's raw logits.
pub fn kl_and_dlogits(p: &Forward, q: &Forward, tau: f64) -> (f64, Vec<f64>) {
    debug_assert_eq!(p.actions, q.actions);
    let kl: f64 = p
        .probs
        .iter()
        .zip(p.log_probs.iter().zip(&q.log_probs))
        .map(|(pi, (lp, lq))| if *pi > 0.0 { pi * (lp - lq) } else { 0.0 })
        .sum();
    let d = p
        .probs
        .iter()
        .zip(p.log_probs.iter().zip(&q.log_probs))
        .map(|(pi, (lp, lq))| pi * (lp - lq - kl) / tau)
        .collect();
    (kl, d)
}
