//! Synthetic scenarios: dataset generation and tag-conditioned detectors.
//!
//! A detector is correct with a probability that depends on the sample's
//! label and its *true* tags: the base TPR (fake samples) or TNR (real
//! samples) plus the sum of matching tag modifiers, clamped to
//! `[0.01, 0.99]`. Detectors are conditionally independent given
//! `(label, true tags)` because each draws from its own keyed stream.

use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::domain::{Label, Sample, TagDim, TagSchema, TagValue, TagVector, ToolOutput};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, Purpose};

pub const RATE_MIN: f64 = 0.01;
pub const RATE_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaShape(pub f64, pub f64);

impl BetaShape {
    pub const CORRECT_DEFAULT: BetaShape = BetaShape(8.0, 2.0);
    pub const INCORRECT_DEFAULT: BetaShape = BetaShape(4.0, 3.0);

    fn is_valid(self) -> bool {
        self.0 > 0.0 && self.1 > 0.0 && self.0.is_finite() && self.1.is_finite()
    }
}

fn default_conf_correct() -> BetaShape {
    BetaShape::CORRECT_DEFAULT
}

fn default_conf_incorrect() -> BetaShape {
    BetaShape::INCORRECT_DEFAULT
}

/// A tag modifier as written in a scenario file, e.g. `style = art: -0.3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifierConfig {
    pub dim: TagDim,
    pub value: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub name: String,
    pub base_tpr: f64,
    pub base_tnr: f64,
    #[serde(default)]
    pub modifiers: Vec<ModifierConfig>,
    pub emits_confidence: bool,
    #[serde(default = "default_conf_correct")]
    pub conf_correct: BetaShape,
    #[serde(default = "default_conf_incorrect")]
    pub conf_incorrect: BetaShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modifier {
    pub tag: TagValue,
    pub delta: f64,
}

/// A resolved detector.
///
/// `tool_id` is the position in the active registry and changes when a
/// registry is subset; `stream_id` is the tool's index in the scenario and
/// keys its random stream, so a tool answers identically in every registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: usize,
    pub stream_id: u64,
    pub name: String,
    pub base_tpr: f64,
    pub base_tnr: f64,
    pub modifiers: Vec<Modifier>,
    pub emits_confidence: bool,
    pub conf_correct: BetaShape,
    pub conf_incorrect: BetaShape,
}

/// Per-dimension categorical distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimPriors {
    pub subject: Vec<f64>,
    pub quality: Vec<f64>,
    pub style: Vec<f64>,
}

impl DimPriors {
    pub fn uniform(schema: &TagSchema) -> Self {
        let u = |n: usize| vec![1.0 / n as f64; n];
        DimPriors {
            subject: u(schema.subject.len()),
            quality: u(schema.quality.len()),
            style: u(schema.style.len()),
        }
    }

    pub fn get(&self, dim: TagDim) -> &[f64] {
        match dim {
            TagDim::Subject => &self.subject,
            TagDim::Quality => &self.quality,
            TagDim::Style => &self.style,
        }
    }

    fn validate(&self, schema: &TagSchema, what: &str) -> Result<()> {
        for dim in TagDim::ALL {
            let p = self.get(dim);
            if p.len() != schema.values(dim).len() {
                return Err(Error::Config(format!(
                    "{what}: {} prior has {} entries, schema has {}",
                    dim.as_str(),
                    p.len(),
                    schema.values(dim).len()
                )));
            }
            if p.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(Error::Config(format!(
                    "{what}: {} prior has a negative or non-finite entry",
                    dim.as_str()
                )));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{what}: {} prior sums to {s}, expected 1",
                    dim.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConditionedPriors {
    pub real: DimPriors,
    pub fake: DimPriors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagPriors {
    LabelConditioned(LabelConditionedPriors),
    Shared(DimPriors),
}

impl TagPriors {
    pub fn for_label(&self, label: Label) -> &DimPriors {
        match self {
            TagPriors::Shared(p) => p,
            TagPriors::LabelConditioned(c) => match label {
                Label::Real => &c.real,
                Label::Fake => &c.fake,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub tag_schema: TagSchema,
    pub tools: Vec<ToolConfig>,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_eval: usize,
    pub p_fake: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_priors: Option<TagPriors>,
    #[serde(default)]
    pub tag_noise: f64,
    pub master_seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calib,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Calib, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::Eval => "eval",
        }
    }

    fn key(self) -> u64 {
        self as u64 + 1
    }
}

/// A validated scenario with resolved tool specs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub tools: Vec<ToolSpec>,
    priors: TagPriors,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let schema = &config.tag_schema;
        schema.validate()?;
        if !(0.0..=1.0).contains(&config.p_fake) {
            return Err(Error::Config(format!(
                "p_fake must lie in [0, 1], got {}",
                config.p_fake
            )));
        }
        if !(0.0..1.0).contains(&config.tag_noise) {
            return Err(Error::Config(format!(
                "tag_noise must lie in [0, 1), got {}",
                config.tag_noise
            )));
        }
        if config.tag_noise > 0.0 && schema.sizes().iter().any(|&n| n < 2) {
            return Err(Error::Config(
                "tag_noise > 0 needs at least two values in every tag dimension".into(),
            ));
        }
        let priors = config
            .tag_priors
            .clone()
            .unwrap_or_else(|| TagPriors::Shared(DimPriors::uniform(schema)));
        match &priors {
            TagPriors::Shared(p) => p.validate(schema, "tag_priors")?,
            TagPriors::LabelConditioned(c) => {
                c.real.validate(schema, "tag_priors.real")?;
                c.fake.validate(schema, "tag_priors.fake")?;
            }
        }
        let mut names = std::collections::HashSet::new();
        let tools = config
            .tools
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if !names.insert(t.name.as_str()) {
                    return Err(Error::Config(format!("duplicate tool name {}", t.name)));
                }
                resolve_tool(i, t, schema)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            config,
            tools,
            priors,
        })
    }

    pub fn schema(&self) -> &TagSchema {
        &self.config.tag_schema
    }

    pub fn master_seed(&self) -> u64 {
        self.config.master_seed
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.config.n_train,
            Split::Calib => self.config.n_calib,
            Split::Eval => self.config.n_eval,
        }
    }

    /// The active registry for a tool mask (scenario indices), renumbered
    /// from 0 in mask order. `None` selects every tool.
    pub fn registry(&self, mask: Option<&[usize]>) -> Result<Vec<ToolSpec>> {
        let Some(mask) = mask else {
            return Ok(self.tools.clone());
        };
        let mut seen = std::collections::HashSet::new();
        mask.iter()
            .enumerate()
            .map(|(pos, &i)| {
                if i >= self.tools.len() || !seen.insert(i) {
                    return Err(Error::Config(format!(
                        "tool mask entry {i} is out of range or repeated (scenario has {} tools)",
                        self.tools.len()
                    )));
                }
                let mut spec = self.tools[i].clone();
                spec.tool_id = pos;
                Ok(spec)
            })
            .collect()
    }

    pub fn tag_priors(&self) -> &TagPriors {
        &self.priors
    }
}

fn resolve_tool(index: usize, t: &ToolConfig, schema: &TagSchema) -> Result<ToolSpec> {
    let open_unit = |x: f64| x > 0.0 && x < 1.0;
    if !open_unit(t.base_tpr) || !open_unit(t.base_tnr) {
        return Err(Error::Config(format!(
            "tool {}: base rates must lie in (0, 1)",
            t.name
        )));
    }
    if !t.conf_correct.is_valid() || !t.conf_incorrect.is_valid() {
        return Err(Error::Config(format!(
            "tool {}: Beta shape parameters must be positive",
            t.name
        )));
    }
    let modifiers = t
        .modifiers
        .iter()
        .map(|m| {
            if !(-0.5..=0.5).contains(&m.delta) {
                return Err(Error::Config(format!(
                    "tool {}: modifier delta {} outside [-0.5, 0.5]",
                    t.name, m.delta
                )));
            }
            let v = schema.index_of(m.dim, &m.value).ok_or_else(|| {
                Error::Config(format!(
                    "tool {}: unknown {} value {:?}",
                    t.name,
                    m.dim.as_str(),
                    m.value
                ))
            })?;
            Ok(Modifier {
                tag: TagValue::new(m.dim, v as u8),
                delta: m.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToolSpec {
        tool_id: index,
        stream_id: index as u64,
        name: t.name.clone(),
        base_tpr: t.base_tpr,
        base_tnr: t.base_tnr,
        modifiers,
        emits_confidence: t.emits_confidence,
        conf_correct: t.conf_correct,
        conf_incorrect: t.conf_incorrect,
    })
}

fn draw_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    last_positive as u8
}

/// Draw one split. Sample `i` depends only on `(master_seed, split, i)`.
pub fn generate_dataset(scenario: &Scenario, split: Split) -> Vec<Sample> {
    let cfg = &scenario.config;
    let sizes = cfg.tag_schema.sizes();
    (0..scenario.split_size(split))
        .map(|i| {
            let mut rng = rng::stream(cfg.master_seed, Purpose::Dataset, &[split.key(), i as u64]);
            let label = if rng.random::<f64>() < cfg.p_fake {
                Label::Fake
            } else {
                Label::Real
            };
            let priors = scenario.priors.for_label(label);
            let mut true_tags = TagVector::default();
            for dim in TagDim::ALL {
                true_tags.set(dim, draw_categorical(&mut rng, priors.get(dim)));
            }
            let mut observed_tags = true_tags;
            if cfg.tag_noise > 0.0 {
                for dim in TagDim::ALL {
                    if rng.random::<f64>() < cfg.tag_noise {
                        let n = sizes[dim.index()] as u8;
                        let k = rng.random_range(0..n - 1);
                        let t = true_tags.get(dim);
                        observed_tags.set(dim, if k >= t { k + 1 } else { k });
                    }
                }
            }
            Sample {
                id: i as u64,
                label,
                true_tags,
                observed_tags,
            }
        })
        .collect()
}

/// Probability the tool answers correctly for this label and tag vector.
pub fn effective_rate(spec: &ToolSpec, label: Label, tags: &TagVector) -> f64 {
    let base = match label {
        Label::Fake => spec.base_tpr,
        Label::Real => spec.base_tnr,
    };
    let delta: f64 = spec
        .modifiers
        .iter()
        .filter(|m| tags.contains(m.tag))
        .map(|m| m.delta)
        .sum();
    (base + delta).clamp(RATE_MIN, RATE_MAX)
}

/// Seed shared by every consumer of one sample's tool outputs.
pub fn episode_seed(master_seed: u64, split: Split, sample_id: u64) -> u64 {
    derive_seed(master_seed, Purpose::Episode, &[split.key(), sample_id])
}

/// Run a detector on a sample.
///
/// The draw is keyed by `(episode_seed, stream_id)`, so a tool gives the same
/// answer for a sample regardless of the round it is called in; `round` is
/// only recorded on the output.
pub fn invoke_tool(spec: &ToolSpec, sample: &Sample, episode_seed: u64, round: u32) -> ToolOutput {
    let mut rng = rng::stream(episode_seed, Purpose::Tool, &[spec.stream_id]);
    let p = effective_rate(spec, sample.label, &sample.true_tags);
    let correct = rng.random::<f64>() < p;
    let verdict = if correct { sample.label } else { sample.label.flip() };
    let confidence = spec.emits_confidence.then(|| {
        let shape = if correct {
            spec.conf_correct
        } else {
            spec.conf_incorrect
        };
        Beta::new(shape.0, shape.1)
            .expect("validated Beta shape")
            .sample(&mut rng)
            .clamp(0.0, 1.0)
    });
    ToolOutput {
        tool_id: spec.tool_id,
        verdict,
        confidence,
        round,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tool(tpr: f64, tnr: f64, mods: Vec<(TagDim, u8, f64)>) -> ToolSpec {
        ToolSpec {
            tool_id: 0,
            stream_id: 0,
            name: "t".into(),
            base_tpr: tpr,
            base_tnr: tnr,
            modifiers: mods
                .into_iter()
                .map(|(d, v, delta)| Modifier {
                    tag: TagValue::new(d, v),
                    delta,
                })
                .collect(),
            emits_confidence: true,
            conf_correct: BetaShape::CORRECT_DEFAULT,
            conf_incorrect: BetaShape::INCORRECT_DEFAULT,
        }
    }

    fn config(p_fake: f64, n: usize) -> ScenarioConfig {
        ScenarioConfig {
            tag_schema: TagSchema::default(),
            tools: vec![ToolConfig {
                name: "a".into(),
                base_tpr: 0.9,
                base_tnr: 0.8,
                modifiers: vec![],
                emits_confidence: false,
                conf_correct: BetaShape::CORRECT_DEFAULT,
                conf_incorrect: BetaShape::INCORRECT_DEFAULT,
            }],
            n_train: n,
            n_calib: n,
            n_eval: n,
            p_fake,
            tag_priors: None,
            tag_noise: 0.0,
            master_seed: 42,
        }
    }

    #[test]
    fn rate_clamps_at_upper_bound() {
        let t = tool(0.9, 0.8, vec![(TagDim::Style, 1, 0.2)]);
        let tags = TagVector::new(0, 0, 1);
        assert_eq!(effective_rate(&t, Label::Fake, &tags), 0.99);
    }

    #[test]
    fn rate_identity_without_modifiers() {
        let t = tool(0.9, 0.8, vec![]);
        assert_eq!(effective_rate(&t, Label::Real, &TagVector::new(1, 1, 1)), 0.8);
    }

    #[test]
    fn rate_additive_composition() {
        let t = tool(
            0.55,
            0.8,
            vec![(TagDim::Quality, 2, 0.3), (TagDim::Style, 0, -0.1)],
        );
        let r = effective_rate(&t, Label::Fake, &TagVector::new(3, 2, 0));
        assert!((r - 0.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_prior_gives_all_fake() {
        let s = Scenario::new(config(1.0, 10)).unwrap();
        let d = generate_dataset(&s, Split::Train);
        assert_eq!(d.len(), 10);
        assert!(d.iter().all(|x| x.label == Label::Fake));
    }

    #[test]
    fn dataset_is_deterministic() {
        let s = Scenario::new(config(0.5, 200)).unwrap();
        let a = serde_json::to_vec(&generate_dataset(&s, Split::Eval)).unwrap();
        let b = serde_json::to_vec(&generate_dataset(&s, Split::Eval)).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&generate_dataset(&s, Split::Train)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fake_fraction_concentrates() {
        // Binomial(10000, 0.5): sd = 0.005, so +-0.02 is a 4-sigma band.
        let s = Scenario::new(config(0.5, 10_000)).unwrap();
        let d = generate_dataset(&s, Split::Train);
        let frac = d.iter().filter(|x| x.label.is_fake()).count() as f64 / d.len() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "fake fraction {frac}");
    }

    #[test]
    fn zero_noise_keeps_tags() {
        let s = Scenario::new(config(0.5, 500)).unwrap();
        assert!(generate_dataset(&s, Split::Calib)
            .iter()
            .all(|x| x.true_tags == x.observed_tags));
    }

    #[test]
    fn noise_always_changes_the_tag_when_it_fires() {
        let mut cfg = config(0.5, 20_000);
        cfg.tag_noise = 0.3;
        let s = Scenario::new(cfg).unwrap();
        let d = generate_dataset(&s, Split::Train);
        let flipped = d
            .iter()
            .filter(|x| x.true_tags.style != x.observed_tags.style)
            .count() as f64
            / d.len() as f64;
        assert!((flipped - 0.3).abs() < 0.015, "style flip rate {flipped}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(Scenario::new(config(1.5, 10)).is_err());
        let mut cfg = config(0.5, 10);
        cfg.tools[0].base_tpr = 1.0;
        assert!(Scenario::new(cfg).is_err());
        let mut cfg = config(0.5, 10);
        cfg.tools[0].modifiers.push(ModifierConfig {
            dim: TagDim::Style,
            value: "cubist".into(),
            delta: 0.1,
        });
        assert!(Scenario::new(cfg).is_err());
        let mut cfg = config(0.5, 10);
        cfg.tag_priors = Some(TagPriors::Shared(DimPriors {
            subject: vec![0.5, 0.5, 0.0, 0.1],
            quality: vec![1.0, 0.0, 0.0],
            style: vec![1.0, 0.0, 0.0],
        }));
        assert!(Scenario::new(cfg).is_err());
        assert!(ScenarioConfig::from_json(r#"{"tools":[],"n_train":1,"n_calib":1,"n_eval":1,"p_fake":0.5,"master_seed":1,"bogus":3}"#).is_err());
    }

    #[test]
    fn label_conditioned_priors_parse() {
        let text = r#"{"tools":[],"n_train":1000,"n_calib":1,"n_eval":1,"p_fake":0.5,"master_seed":1,
            "tag_priors":{"real":{"subject":[1,0,0,0],"quality":[1,0,0],"style":[1,0,0]},
                          "fake":{"subject":[0,0,0,1],"quality":[0,0,1],"style":[0,0,1]}}}"#;
        let s = Scenario::new(ScenarioConfig::from_json(text).unwrap()).unwrap();
        for x in generate_dataset(&s, Split::Train) {
            let expect = match x.label {
                Label::Real => TagVector::new(0, 0, 0),
                Label::Fake => TagVector::new(3, 2, 2),
            };
            assert_eq!(x.true_tags, expect);
        }
    }

    #[test]
    fn text_only_tools_never_report_confidence() {
        let mut t = tool(0.9, 0.9, vec![]);
        t.emits_confidence = false;
        let s = Sample {
            id: 0,
            label: Label::Fake,
            true_tags: TagVector::default(),
            observed_tags: TagVector::default(),
        };
        assert!(invoke_tool(&t, &s, 5, 1).confidence.is_none());
        t.emits_confidence = true;
        let c = invoke_tool(&t, &s, 5, 1).confidence.unwrap();
        assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn invocation_is_deterministic() {
        let t = tool(0.7, 0.6, vec![]);
        let s = Sample {
            id: 9,
            label: Label::Real,
            true_tags: TagVector::new(1, 2, 0),
            observed_tags: TagVector::new(1, 2, 0),
        };
        assert_eq!(invoke_tool(&t, &s, 77, 3), invoke_tool(&t, &s, 77, 3));
    }

    #[test]
    fn verdict_frequency_matches_rate() {
        // rate 0.99 on fake samples; sd over 1e4 draws is ~0.001.
        let t = tool(0.99, 0.5, vec![]);
        let s = Sample {
            id: 0,
            label: Label::Fake,
            true_tags: TagVector::default(),
            observed_tags: TagVector::default(),
        };
        let n = 10_000;
        let hits = (0..n)
            .filter(|&k| invoke_tool(&t, &s, episode_seed(1, Split::Eval, k), 1).verdict == Label::Fake)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.99).abs() <= 0.005, "{frac}");
    }

    #[test]
    fn registry_subset_renumbers_but_keeps_streams() {
        let mut cfg = config(0.5, 10);
        let mut b = cfg.tools[0].clone();
        b.name = "b".into();
        cfg.tools.push(b);
        let s = Scenario::new(cfg).unwrap();
        let r = s.registry(Some(&[1])).unwrap();
        assert_eq!(r[0].tool_id, 0);
        assert_eq!(r[0].stream_id, 1);
        assert!(s.registry(Some(&[2])).is_err());
        assert!(s.registry(Some(&[0, 0])).is_err());
    }
}
