//! Tool capability profiles.
//!
//! Calibration outputs are sliced by observed tag value and summarized as
//! accuracy, false negative rate and false positive rate. A profile keeps
//! only the slices that deviate notably from the tool's overall behavior
//! (at least `delta` away) and reports them as coarse linguistic levels,
//! never as raw numbers. Conflict hints mark the tag values on which a tool
//! is the most accurate among its peers.

use serde::{Deserialize, Serialize};

use crate::domain::{Label, Sample, TagSchema, TagValue, ToolOutput};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_SUPPORT: usize = 20;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const BIAS_MARGIN: f64 = 0.15;

/// Slack for floating-point comparisons against the conciseness threshold.
const DELTA_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl Level {
    /// very_low = 0, low = 0.25, ..., very_high = 1.
    pub fn ordinal(self) -> f64 {
        self as u8 as f64 / 4.0
    }

    pub fn mirror(self) -> Level {
        match self {
            Level::VeryLow => Level::VeryHigh,
            Level::Low => Level::High,
            Level::Moderate => Level::Moderate,
            Level::High => Level::Low,
            Level::VeryHigh => Level::VeryLow,
        }
    }

    pub fn from_accuracy(x: f64) -> Level {
        if x < 0.55 {
            Level::VeryLow
        } else if x < 0.7 {
            Level::Low
        } else if x < 0.85 {
            Level::Moderate
        } else if x < 0.95 {
            Level::High
        } else {
            Level::VeryHigh
        }
    }

    /// Magnitude of an error rate, on the mirrored accuracy scale:
    /// an error of 0.02 is `very_low`.
    pub fn from_error(x: f64) -> Level {
        Level::from_accuracy(1.0 - x).mirror()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Fnr,
    Fpr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::Fnr, Metric::Fpr];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Accuracy
    }

    pub fn level(self, value: f64) -> Level {
        if self.higher_is_better() {
            Level::from_accuracy(value)
        } else {
            Level::from_error(value)
        }
    }

    /// Position of a level on a "how good is this" scale in [0, 1].
    pub fn goodness(self, level: Level) -> f64 {
        if self.higher_is_better() {
            level.ordinal()
        } else {
            1.0 - level.ordinal()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub accuracy: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub support: usize,
    pub n_fake: usize,
    pub n_real: usize,
    pub reliable: bool,
}

impl SliceMetrics {
    fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize, min_support: usize) -> Self {
        let n_fake = tp + fn_;
        let n_real = tn + fp;
        let n = n_fake + n_real;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        SliceMetrics {
            accuracy: ratio(tp + tn, n),
            fnr: ratio(fn_, n_fake),
            fpr: ratio(fp, n_real),
            support: n,
            n_fake,
            n_real,
            reliable: n >= min_support,
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Fnr => self.fnr,
            Metric::Fpr => self.fpr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub tag: TagValue,
    pub metrics: SliceMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub tool_id: usize,
    pub overall: SliceMetrics,
    /// One entry per schema tag value, in canonical order.
    pub slices: Vec<SliceEntry>,
}

impl TagMetrics {
    pub fn slice(&self, tag: TagValue) -> Option<&SliceMetrics> {
        self.slices.iter().find(|s| s.tag == tag).map(|s| &s.metrics)
    }

    /// Slice accuracy if the slice is reliable.
    pub fn reliable_accuracy(&self, tag: TagValue) -> Option<f64> {
        self.slice(tag).filter(|m| m.reliable).map(|m| m.accuracy)
    }
}

/// Exact empirical metrics of one tool on a calibration set, sliced by
/// observed tags.
pub fn compute_tag_metrics(
    tool_id: usize,
    schema: &TagSchema,
    calib: &[Sample],
    outputs: &[ToolOutput],
    min_support: usize,
) -> Result<TagMetrics> {
    if calib.len() != outputs.len() {
        return Err(Error::Input(format!(
            "{} calibration samples but {} tool outputs",
            calib.len(),
            outputs.len()
        )));
    }
    if let Some(o) = outputs.iter().find(|o| o.tool_id != tool_id) {
        return Err(Error::Input(format!(
            "output from tool {} in metrics for tool {tool_id}",
            o.tool_id
        )));
    }
    // [tp, fn, tn, fp]
    let tags = schema.all_tag_values();
    let mut overall = [0usize; 4];
    let mut per_tag = vec![[0usize; 4]; tags.len()];
    for (s, o) in calib.iter().zip(outputs) {
        let cell = match (s.label, o.verdict) {
            (Label::Fake, Label::Fake) => 0,
            (Label::Fake, Label::Real) => 1,
            (Label::Real, Label::Real) => 2,
            (Label::Real, Label::Fake) => 3,
        };
        overall[cell] += 1;
        for (k, tag) in tags.iter().enumerate() {
            if s.observed_tags.contains(*tag) {
                per_tag[k][cell] += 1;
            }
        }
    }
    let make = |c: [usize; 4], min: usize| SliceMetrics::from_counts(c[0], c[1], c[2], c[3], min);
    Ok(TagMetrics {
        tool_id,
        overall: make(overall, 0),
        slices: tags
            .into_iter()
            .zip(per_tag)
            .map(|(tag, c)| SliceEntry {
                tag,
                metrics: make(c, min_support),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bias {
    RealBiased,
    FakeBiased,
    Balanced,
}

impl Bias {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_rates(fnr: f64, fpr: f64) -> Bias {
        if fnr + BIAS_MARGIN < fpr {
            Bias::FakeBiased
        } else if fpr + BIAS_MARGIN < fnr {
            Bias::RealBiased
        } else {
            Bias::Balanced
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverallProfile {
    pub accuracy: Level,
    pub bias: Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub tag: TagValue,
    pub metric: Metric,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictHint {
    pub tag: TagValue,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub tool_id: usize,
    pub overall: OverallProfile,
    pub strengths: Vec<ProfileEntry>,
    pub weaknesses: Vec<ProfileEntry>,
    pub conflict_hints: Vec<ConflictHint>,
    pub lightweight: bool,
}

impl ToolProfile {
    pub fn has_rank1_hint(&self, tag: TagValue) -> bool {
        self.conflict_hints.iter().any(|h| h.tag == tag && h.rank == 1)
    }
}

pub fn overall_section(metrics: &TagMetrics) -> OverallProfile {
    OverallProfile {
        accuracy: Level::from_accuracy(metrics.overall.accuracy),
        bias: Bias::from_rates(metrics.overall.fnr, metrics.overall.fpr),
    }
}

/// Compile the profile of one tool.
///
/// `all_tools` holds the metrics of every tool in the registry (including
/// this one) and drives the conflict-hint ranking; ties go to the lower
/// tool id.
pub fn compile_profile(metrics: &TagMetrics, all_tools: &[TagMetrics], delta: f64) -> ToolProfile {
    let mut strengths = Vec::new();
    let mut weaknesses = Vec::new();
    let mut conflict_hints = Vec::new();
    for entry in metrics.slices.iter().filter(|e| e.metrics.reliable) {
        for metric in Metric::ALL {
            let value = entry.metrics.get(metric);
            let diff = value - metrics.overall.get(metric);
            if diff.abs() + DELTA_SLACK < delta {
                continue;
            }
            let item = ProfileEntry {
                tag: entry.tag,
                metric,
                level: metric.level(value),
            };
            if (diff > 0.0) == metric.higher_is_better() {
                strengths.push(item);
            } else {
                weaknesses.push(item);
            }
        }
        let acc = entry.metrics.accuracy;
        let beaten = all_tools.iter().any(|other| {
            other.tool_id != metrics.tool_id
                && other.reliable_accuracy(entry.tag).is_some_and(|o| {
                    o > acc || (o == acc && other.tool_id < metrics.tool_id)
                })
        });
        if !beaten {
            conflict_hints.push(ConflictHint {
                tag: entry.tag,
                rank: 1,
            });
        }
    }
    let lightweight = strengths.is_empty() && weaknesses.is_empty() && conflict_hints.is_empty();
    ToolProfile {
        tool_id: metrics.tool_id,
        overall: overall_section(metrics),
        strengths,
        weaknesses,
        conflict_hints,
        lightweight,
    }
}

/// A profile carrying only the overall section, for tools added after training.
pub fn make_lightweight(tool_id: usize, accuracy: Level, bias: Bias) -> ToolProfile {
    ToolProfile {
        tool_id,
        overall: OverallProfile { accuracy, bias },
        strengths: Vec::new(),
        weaknesses: Vec::new(),
        conflict_hints: Vec::new(),
        lightweight: true,
    }
}

pub fn compile_profiles(all_tools: &[TagMetrics], delta: f64) -> Vec<ToolProfile> {
    all_tools
        .iter()
        .map(|m| compile_profile(m, all_tools, delta))
        .collect()
}
