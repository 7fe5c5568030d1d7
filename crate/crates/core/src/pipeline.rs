//! End-to-end experiment steps shared by the command line and the test
//! suites: calibration, evaluation of policies and baselines, and the
//! train-free extension protocol.

use serde::{Deserialize, Serialize};

use crate::baselines::{oracle_ceiling, run_baseline, BaselineKind};
use crate::domain::{Sample, Trajectory};
use crate::error::{Error, Result};
use crate::grpo::{train, TrainConfig, TrainOutcome};
use crate::metrics::{compute_metrics, MetricReport};
use crate::orchestrator::{run_batch, EpisodeConfig, EpisodeSeeds, Environment, Policy};
use crate::par::{self, ExecMode};
use crate::policy::checkpoint::params_hash;
use crate::policy::{FeatureOptions, ParametricPolicy, PolicyParams};
use crate::profile::{
    compile_profiles, compute_tag_metrics, make_lightweight, overall_section, TagMetrics,
    ToolProfile,
};
use crate::sim::{episode_seed, generate_dataset, invoke_tool, Scenario, Split, ToolSpec};

/// The three dataset splits of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub calib: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Splits {
    pub fn generate(scenario: &Scenario) -> Self {
        Splits {
            train: generate_dataset(scenario, Split::Train),
            calib: generate_dataset(scenario, Split::Calib),
            eval: generate_dataset(scenario, Split::Eval),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub metrics: Vec<TagMetrics>,
    pub profiles: Vec<ToolProfile>,
}

/// Run every registry tool once over the calibration split and compile
/// profiles relative to that registry.
pub fn calibrate(
    registry: &[ToolSpec],
    scenario: &Scenario,
    calib: &[Sample],
    min_support: usize,
    delta: f64,
    mode: ExecMode,
) -> Result<Calibration> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1], got {delta}")));
    }
    let master = scenario.master_seed();
    let metrics = par::try_map(mode, registry, |_, spec| {
        let outputs: Vec<_> = calib
            .iter()
            .map(|s| invoke_tool(spec, s, episode_seed(master, Split::Calib, s.id), 1))
            .collect();
        compute_tag_metrics(spec.tool_id, scenario.schema(), calib, &outputs, min_support)
    })?;
    let profiles = compile_profiles(&metrics, delta);
    Ok(Calibration { metrics, profiles })
}

/// Tool and policy seeds for an evaluation episode. Tool draws match those
/// seen by the baselines on the same sample.
pub fn eval_seeds(master_seed: u64, sample: &Sample) -> EpisodeSeeds {
    EpisodeSeeds::shared(episode_seed(master_seed, Split::Eval, sample.id))
}

pub fn evaluate_policy(
    policy: &dyn Policy,
    samples: &[Sample],
    env: &Environment<'_>,
    master_seed: u64,
    mode: ExecMode,
) -> Result<(Vec<Trajectory>, MetricReport)> {
    let trajs = run_batch(samples, policy, env, |s| eval_seeds(master_seed, s), mode)?;
    let report = compute_metrics(trajs.iter().zip(samples).map(|(t, s)| {
        (t.final_verdict.expect("episodes always conclude"), s.label)
    }))?;
    Ok((trajs, report))
}

pub fn evaluate_baseline(
    kind: &BaselineKind,
    samples: &[Sample],
    registry: &[ToolSpec],
    calib_metrics: Option<&[TagMetrics]>,
    master_seed: u64,
    mode: ExecMode,
) -> Result<MetricReport> {
    let verdicts = par::try_map(mode, samples, |_, s| {
        run_baseline(kind, s, registry, calib_metrics, episode_seed(master_seed, Split::Eval, s.id))
    })?;
    compute_metrics(verdicts.into_iter().zip(samples.iter().map(|s| s.label)))
}

/// Every single tool, majority over all tools, confidence MoE, OR over all
/// tools and majority over the three best-matching tools.
pub fn standard_baselines(registry_size: usize) -> Vec<BaselineKind> {
    let mut v: Vec<BaselineKind> = (0..registry_size).map(BaselineKind::SingleTool).collect();
    v.push(BaselineKind::InvokeAllMajority);
    v.push(BaselineKind::MoeConfidence);
    v.push(BaselineKind::OrFusion((0..registry_size).collect()));
    v.push(BaselineKind::MatchBestTools(3.min(registry_size)));
    v
}

/// Profiles for `registry` where the tools from position `known` onwards
/// get lightweight profiles built from their overall calibration metrics.
pub fn extended_profiles(known: &[ToolProfile], metrics: &[TagMetrics]) -> Result<Vec<ToolProfile>> {
    if known.len() > metrics.len() {
        return Err(Error::Input("more profiles than calibrated tools".into()));
    }
    let mut out = known.to_vec();
    for m in &metrics[known.len()..] {
        let o = overall_section(m);
        out.push(make_lightweight(m.tool_id, o.accuracy, o.bias));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub base_tools: Vec<String>,
    pub extended_tools: Vec<String>,
    pub base: MetricReport,
    pub extended: MetricReport,
    pub b_acc_delta: Option<f64>,
    pub hash_before: String,
    pub hash_after: String,
}

/// Evaluate a frozen checkpoint on its training registry and on that
/// registry plus extension tools (scenario indices) carrying lightweight
/// profiles.
#[allow(clippy::too_many_arguments)]
pub fn extend(
    params: &PolicyParams,
    scenario: &Scenario,
    splits: &Splits,
    train_mask: &[usize],
    extension: &[usize],
    episode: EpisodeConfig,
    calib: &Calibration,
    mode: ExecMode,
) -> Result<ExtensionReport> {
    if extension.is_empty() {
        return Err(Error::Config("extension tool set is empty".into()));
    }
    let hash_before = params_hash(params);
    let base_reg = scenario.registry(Some(train_mask))?;
    let mut full_mask = train_mask.to_vec();
    full_mask.extend(extension.iter().copied().filter(|i| !train_mask.contains(i)));
    let ext_reg = scenario.registry(Some(&full_mask))?;
    if calib.profiles.len() != base_reg.len() {
        return Err(Error::Input("profiles do not match the training registry".into()));
    }
    let ext_cal = calibrate(&ext_reg, scenario, &splits.calib, 0, 1.0, mode)?;
    let ext_profiles = extended_profiles(&calib.profiles, &ext_cal.metrics)?;
    let sizes = scenario.schema().sizes();
    let policy = ParametricPolicy::greedy(params);
    let master = scenario.master_seed();
    let base_env = Environment::new(&base_reg, &calib.profiles, sizes, episode)?;
    let (_, base) = evaluate_policy(&policy, &splits.eval, &base_env, master, mode)?;
    let ext_env = Environment::new(&ext_reg, &ext_profiles, sizes, episode)?;
    let (_, extended) = evaluate_policy(&policy, &splits.eval, &ext_env, master, mode)?;
    let hash_after = params_hash(params);
    let b_acc_delta = match (base.b_acc, extended.b_acc) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(ExtensionReport {
        base_tools: base_reg.iter().map(|t| t.name.clone()).collect(),
        extended_tools: ext_reg.iter().map(|t| t.name.clone()).collect(),
        base,
        extended,
        b_acc_delta,
        hash_before,
        hash_after,
    })
}

/// Everything measured for one seed of the standard experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub policy: MetricReport,
    pub policy_no_profiles: MetricReport,
    pub heuristic: MetricReport,
    pub baselines: Vec<(String, MetricReport)>,
    pub oracle_ceiling: f64,
    pub first10_reward: f64,
    pub last10_reward: f64,
}

/// Train on the full registry and evaluate the policy, its profile-free
/// ablation, the heuristic, every standard baseline and the oracle.
pub fn run_standard(
    scenario: &Scenario,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<(SeedResult, TrainOutcome, Calibration)> {
    let splits = Splits::generate(scenario);
    let registry = scenario.registry(None)?;
    let cal = calibrate(
        &registry,
        scenario,
        &splits.calib,
        crate::profile::DEFAULT_MIN_SUPPORT,
        crate::profile::DEFAULT_DELTA,
        mode,
    )?;
    let sizes = scenario.schema().sizes();
    let env = Environment::new(&registry, &cal.profiles, sizes, cfg.episode)?;
    let outcome = train(cfg, &splits.train, &env, mode, false)?;
    let master = scenario.master_seed();
    let greedy = ParametricPolicy::greedy(&outcome.params);
    let (_, policy) = evaluate_policy(&greedy, &splits.eval, &env, master, mode)?;
    let ablated = greedy.with_features(FeatureOptions { zero_profiles: true });
    let (_, policy_no_profiles) = evaluate_policy(&ablated, &splits.eval, &env, master, mode)?;
    let (_, heuristic) = evaluate_policy(
        &crate::policy::HeuristicPolicy { a_emit: cfg.a_emit },
        &splits.eval,
        &env,
        master,
        mode,
    )?;
    let baselines = standard_baselines(registry.len())
        .iter()
        .map(|k| {
            Ok((
                k.name(&registry),
                evaluate_baseline(k, &splits.eval, &registry, Some(&cal.metrics), master, mode)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let oracle = oracle_ceiling(&registry, &splits.eval, scenario.config.p_fake, cfg.episode.per_call_cost)?;
    let mean = |xs: &[crate::grpo::StepStats]| {
        xs.iter().map(|s| s.mean_reward).sum::<f64>() / xs.len().max(1) as f64
    };
    let k = outcome.log.len().min(10);
    let result = SeedResult {
        seed: cfg.seed,
        policy,
        policy_no_profiles,
        heuristic,
        baselines,
        oracle_ceiling: oracle,
        first10_reward: mean(&outcome.log[..k]),
        last10_reward: mean(&outcome.log[outcome.log.len() - k..]),
    };
    Ok((result, outcome, cal))
}
