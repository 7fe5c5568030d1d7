//! Fixed ensemble baselines and the Bayes-optimal oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Label, Sample, TagVector, ToolOutput, Verdict};
use crate::error::{Error, Result};
use crate::profile::TagMetrics;
use crate::sim::{effective_rate, invoke_tool, ToolSpec};

/// Majority verdict. Ties go to the most confident output; if that is also
/// tied across verdicts, or no output carries a confidence, the answer is fake.
pub fn majority_vote(outputs: &[ToolOutput]) -> Verdict {
    let fakes = outputs.iter().filter(|o| o.verdict.is_fake()).count();
    let reals = outputs.len() - fakes;
    if fakes != reals {
        return if fakes > reals { Label::Fake } else { Label::Real };
    }
    most_confident(outputs.iter()).unwrap_or(Label::Fake)
}

/// Verdict of the highest-confidence output; `None` when no output has a
/// confidence or the maximum is shared by both verdicts.
fn most_confident<'a>(outputs: impl Iterator<Item = &'a ToolOutput>) -> Option<Verdict> {
    let mut best: Option<(f64, Option<Verdict>)> = None;
    for o in outputs {
        let Some(c) = o.confidence else { continue };
        best = match best {
            None => Some((c, Some(o.verdict))),
            Some((b, _)) if c > b => Some((c, Some(o.verdict))),
            Some((b, cur)) if c == b && cur != Some(o.verdict) => Some((b, None)),
            keep => keep,
        };
    }
    best.and_then(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SingleTool(usize),
    InvokeAllMajority,
    MoeConfidence,
    OrFusion(Vec<usize>),
    MatchBestTools(usize),
}

impl BaselineKind {
    pub fn name(&self, registry: &[ToolSpec]) -> String {
        let tool = |i: &usize| registry.get(*i).map_or_else(|| format!("#{i}"), |t| t.name.clone());
        match self {
            BaselineKind::SingleTool(i) => tool(i),
            BaselineKind::InvokeAllMajority => "invoke_all_majority".into(),
            BaselineKind::MoeConfidence => "moe_confidence".into(),
            BaselineKind::OrFusion(ids) => {
                format!("or({})", ids.iter().map(tool).collect::<Vec<_>>().join("+"))
            }
            BaselineKind::MatchBestTools(k) => format!("match_best_{k}"),
        }
    }

    pub fn validate(&self, registry_size: usize) -> Result<()> {
        let bad = |i: usize| i >= registry_size;
        let ok = match self {
            BaselineKind::SingleTool(i) => !bad(*i),
            BaselineKind::OrFusion(ids) => !ids.is_empty() && !ids.iter().any(|&i| bad(i)),
            BaselineKind::MatchBestTools(k) => *k >= 1,
            _ => registry_size > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "baseline {self:?} is invalid for a registry of {registry_size} tools"
            )))
        }
    }
}

fn outputs_for(ids: &[usize], sample: &Sample, registry: &[ToolSpec], seed: u64) -> Vec<ToolOutput> {
    ids.iter()
        .enumerate()
        .map(|(k, &i)| invoke_tool(&registry[i], sample, seed, k as u32 + 1))
        .collect()
}

/// Tools ranked by summed calibration accuracy over the sample's three
/// observed tag slices (overall accuracy stands in for unreliable slices).
pub fn best_matching_tools(tags: &TagVector, metrics: &[TagMetrics], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = metrics
        .iter()
        .map(|m| {
            let score = tags
                .tag_values()
                .iter()
                .map(|&t| m.reliable_accuracy(t).unwrap_or(m.overall.accuracy))
                .sum::<f64>();
            (score, m.tool_id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn run_baseline(
    kind: &BaselineKind,
    sample: &Sample,
    registry: &[ToolSpec],
    calib_metrics: Option<&[TagMetrics]>,
    episode_seed: u64,
) -> Result<Verdict> {
    kind.validate(registry.len())?;
    let all: Vec<usize> = (0..registry.len()).collect();
    Ok(match kind {
        BaselineKind::SingleTool(i) => invoke_tool(&registry[*i], sample, episode_seed, 1).verdict,
        BaselineKind::InvokeAllMajority => majority_vote(&outputs_for(&all, sample, registry, episode_seed)),
        BaselineKind::MoeConfidence => {
            let outs = outputs_for(&all, sample, registry, episode_seed);
            most_confident(outs.iter()).unwrap_or_else(|| majority_vote(&outs))
        }
        BaselineKind::OrFusion(ids) => {
            let outs = outputs_for(ids, sample, registry, episode_seed);
            if outs.iter().any(|o| o.verdict.is_fake()) {
                Label::Fake
            } else {
                Label::Real
            }
        }
        BaselineKind::MatchBestTools(k) => {
            let metrics = calib_metrics.ok_or_else(|| {
                Error::Input("match_best_tools needs calibration metrics".into())
            })?;
            if metrics.len() != registry.len() {
                return Err(Error::Input(
                    "calibration metrics are not aligned with the registry".into(),
                ));
            }
            let ids = best_matching_tools(&sample.observed_tags, metrics, *k);
            majority_vote(&outputs_for(&ids, sample, registry, episode_seed))
        }
    })
}

pub const ORACLE_MAX_TOOLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleAction {
    Stop(Verdict),
    Call(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub first_action: OracleAction,
}

struct OracleSolver {
    p_fake: f64,
    /// P(verdict = fake | label = fake) per tool.
    says_fake_if_fake: Vec<f64>,
    /// P(verdict = fake | label = real) per tool.
    says_fake_if_real: Vec<f64>,
    cost: f64,
    memo: Vec<f64>,
}

impl OracleSolver {
    fn posterior_fake(&self, called: u32, fakes: u32) -> f64 {
        let mut wf = self.p_fake;
        let mut wr = 1.0 - self.p_fake;
        for j in 0..self.says_fake_if_fake.len() {
            if called & (1 << j) == 0 {
                continue;
            }
            if fakes & (1 << j) != 0 {
                wf *= self.says_fake_if_fake[j];
                wr *= self.says_fake_if_real[j];
            } else {
                wf *= 1.0 - self.says_fake_if_fake[j];
                wr *= 1.0 - self.says_fake_if_real[j];
            }
        }
        if wf + wr == 0.0 {
            0.5
        } else {
            wf / (wf + wr)
        }
    }

    fn key(&self, called: u32, fakes: u32) -> usize {
        ((called as usize) << self.says_fake_if_fake.len()) | fakes as usize
    }

    /// Returns (value, best action) at state (called set, fake-verdict set).
    fn solve(&mut self, called: u32, fakes: u32) -> (f64, OracleAction) {
        let q = self.posterior_fake(called, fakes);
        let stop = if q >= 0.5 {
            (q, OracleAction::Stop(Label::Fake))
        } else {
            (1.0 - q, OracleAction::Stop(Label::Real))
        };
        let mut best = stop;
        for j in 0..self.says_fake_if_fake.len() {
            if called & (1 << j) != 0 {
                continue;
            }
            let p_fake_verdict = q * self.says_fake_if_fake[j] + (1.0 - q) * self.says_fake_if_real[j];
            let next = called | (1 << j);
            let v = -self.cost
                + p_fake_verdict * self.value(next, fakes | (1 << j))
                + (1.0 - p_fake_verdict) * self.value(next, fakes);
            if v > best.0 + 1e-12 {
                best = (v, OracleAction::Call(j));
            }
        }
        best
    }

    fn value(&mut self, called: u32, fakes: u32) -> f64 {
        let k = self.key(called, fakes);
        if self.memo[k].is_nan() {
            self.memo[k] = self.solve(called, fakes).0;
        }
        self.memo[k]
    }
}

/// Bayes-optimal expected accuracy (net of call costs) for a sample with the
/// given true tags, by backward induction over (called tools, verdicts seen).
/// Uses verdicts only; confidences are ignored.
pub fn optimal_value(
    registry: &[ToolSpec],
    tags: &TagVector,
    p_fake: f64,
    per_call_cost: f64,
) -> Result<OracleResult> {
    if registry.len() > ORACLE_MAX_TOOLS {
        return Err(Error::Config(format!(
            "oracle supports at most {ORACLE_MAX_TOOLS} tools, registry has {}",
            registry.len()
        )));
    }
    if !(0.0..=1.0).contains(&p_fake) {
        return Err(Error::Config(format!("p_fake {p_fake} outside [0, 1]")));
    }
    let m = registry.len();
    let mut solver = OracleSolver {
        p_fake,
        says_fake_if_fake: registry.iter().map(|t| effective_rate(t, Label::Fake, tags)).collect(),
        says_fake_if_real: registry
            .iter()
            .map(|t| 1.0 - effective_rate(t, Label::Real, tags))
            .collect(),
        cost: per_call_cost,
        memo: vec![f64::NAN; 1 << (2 * m)],
    };
    let (value, first_action) = solver.solve(0, 0);
    Ok(OracleResult {
        value,
        first_action,
    })
}

/// Mean oracle value over samples, evaluated at each sample's true tags.
pub fn oracle_ceiling(
    registry: &[ToolSpec],
    samples: &[Sample],
    p_fake: f64,
    per_call_cost: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("oracle ceiling over an empty sample set".into()));
    }
    let mut cache: HashMap<TagVector, f64> = HashMap::new();
    let mut total = 0.0;
    for s in samples {
        let v = match cache.get(&s.true_tags) {
            Some(v) => *v,
            None => {
                let v = optimal_value(registry, &s.true_tags, p_fake, per_call_cost)?.value;
                cache.insert(s.true_tags, v);
                v
            }
        };
        total += v;
    }
    Ok(total / samples.len() as f64)
}
