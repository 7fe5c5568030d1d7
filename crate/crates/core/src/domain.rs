//! Shared vocabulary: labels, tags, samples, tool outputs, actions and
//! episode trajectories, plus the JSON Lines trajectory log.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth label of a sample; also used as the verdict type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

pub type Verdict = Label;

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The three tag dimensions a tagger assigns to every sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagDim {
    Subject,
    Quality,
    Style,
}

impl TagDim {
    pub const ALL: [TagDim; 3] = [TagDim::Subject, TagDim::Quality, TagDim::Style];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TagDim::Subject => "subject",
            TagDim::Quality => "quality",
            TagDim::Style => "style",
        }
    }
}

/// Candidate values per tag dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagSchema {
    pub subject: Vec<String>,
    pub quality: Vec<String>,
    pub style: Vec<String>,
}

impl Default for TagSchema {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        TagSchema {
            subject: s(&["person", "animal", "object", "scene"]),
            quality: s(&["high", "medium", "low"]),
            style: s(&["photo", "art", "render"]),
        }
    }
}

impl TagSchema {
    pub fn values(&self, dim: TagDim) -> &[String] {
        match dim {
            TagDim::Subject => &self.subject,
            TagDim::Quality => &self.quality,
            TagDim::Style => &self.style,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.subject.len(), self.quality.len(), self.style.len()]
    }

    pub fn index_of(&self, dim: TagDim, value: &str) -> Option<usize> {
        self.values(dim).iter().position(|v| v == value)
    }

    pub fn name(&self, tag: TagValue) -> &str {
        &self.values(tag.dim)[tag.value as usize]
    }

    /// Every (dimension, value) pair in canonical order.
    pub fn all_tag_values(&self) -> Vec<TagValue> {
        TagDim::ALL
            .iter()
            .flat_map(|&dim| {
                (0..self.values(dim).len()).map(move |v| TagValue { dim, value: v as u8 })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for dim in TagDim::ALL {
            let vals = self.values(dim);
            if vals.is_empty() || vals.len() > 64 {
                return Err(Error::Config(format!(
                    "tag dimension {} must have between 1 and 64 values",
                    dim.as_str()
                )));
            }
            let unique: HashSet<&String> = vals.iter().collect();
            if unique.len() != vals.len() {
                return Err(Error::Config(format!(
                    "tag dimension {} has duplicate values",
                    dim.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// One concrete tag value, e.g. `style = art`, stored as an index into the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagValue {
    pub dim: TagDim,
    pub value: u8,
}

impl TagValue {
    pub fn new(dim: TagDim, value: u8) -> Self {
        TagValue { dim, value }
    }
}

/// A sample's tags, one value index per dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagVector {
    pub subject: u8,
    pub quality: u8,
    pub style: u8,
}

impl TagVector {
    pub fn new(subject: u8, quality: u8, style: u8) -> Self {
        TagVector {
            subject,
            quality,
            style,
        }
    }

    pub fn get(&self, dim: TagDim) -> u8 {
        match dim {
            TagDim::Subject => self.subject,
            TagDim::Quality => self.quality,
            TagDim::Style => self.style,
        }
    }

    pub fn set(&mut self, dim: TagDim, value: u8) {
        match dim {
            TagDim::Subject => self.subject = value,
            TagDim::Quality => self.quality = value,
            TagDim::Style => self.style = value,
        }
    }

    pub fn contains(&self, tag: TagValue) -> bool {
        self.get(tag.dim) == tag.value
    }

    /// The three tag values this vector matches, in dimension order.
    pub fn tag_values(&self) -> [TagValue; 3] {
        TagDim::ALL.map(|d| TagValue::new(d, self.get(d)))
    }
}

/// An image surrogate. The policy only ever sees `observed_tags`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub label: Label,
    pub true_tags: TagVector,
    pub observed_tags: TagVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub tool_id: usize,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    CallTool { tool_id: usize },
    Stop { verdict: Verdict },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::CallTool { tool_id } => write!(f, "call_tool({tool_id})"),
            Action::Stop { verdict } => write!(f, "stop({verdict})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub round: u32,
    pub action: Action,
    pub analysis_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_output: Option<ToolOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_id: u64,
    pub steps: Vec<TrajectoryStep>,
    pub final_verdict: Option<Verdict>,
    pub format_valid: bool,
}

impl Trajectory {
    pub fn tool_outputs(&self) -> impl Iterator<Item = &ToolOutput> {
        self.steps.iter().filter_map(|s| s.tool_output.as_ref())
    }

    pub fn num_tool_calls(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, Action::CallTool { .. }))
            .count()
    }
}

/// Structural check of one episode.
///
/// Besides the trajectory invariants (consecutive rounds from 1, outputs
/// exactly on tool calls, no repeated tool) this requires a tool call first,
/// an explicit stop as the last step carrying the final verdict, and no stop
/// anywhere else. Force-concluded episodes therefore fail it.
pub fn validate_trajectory(traj: &Trajectory, registry_size: usize) -> bool {
    let Some(final_verdict) = traj.final_verdict else {
        return false;
    };
    let Some(first) = traj.steps.first() else {
        return false;
    };
    if !matches!(first.action, Action::CallTool { .. }) {
        return false;
    }
    let mut seen = HashSet::new();
    let last = traj.steps.len() - 1;
    for (i, step) in traj.steps.iter().enumerate() {
        if step.round as usize != i + 1 {
            return false;
        }
        match step.action {
            Action::CallTool { tool_id } => {
                if tool_id >= registry_size || !seen.insert(tool_id) {
                    return false;
                }
                let Some(out) = &step.tool_output else {
                    return false;
                };
                if out.tool_id != tool_id || out.round != step.round {
                    return false;
                }
                if let Some(c) = out.confidence {
                    if !(0.0..=1.0).contains(&c) {
                        return false;
                    }
                }
            }
            Action::Stop { verdict } => {
                if step.tool_output.is_some() || i != last || verdict != final_verdict {
                    return false;
                }
            }
        }
    }
    matches!(traj.steps[last].action, Action::Stop { .. })
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("line {}: {e}", lineno + 1))
        })?);
    }
    Ok(out)
}
