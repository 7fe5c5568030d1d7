//! Command-line front end for the orchestration experiments.
//!
//! Every command writes under an output directory with a fixed layout:
//!
//! ```text
//! <out>/scenario/     scenario.json, registry.json, {train,calib,eval}-seed{s}.jsonl
//! <out>/profiles/     profiles-seed{s}.json
//! <out>/checkpoints/  policy-seed{s}.json + policy-seed{s}.bin
//! <out>/logs/         train-seed{s}.csv, eval-seed{s}.jsonl, run.log
//! <out>/reports/      eval-seed{s}.{csv,md,json}, ablate.json, extend.json, gradcheck.json
//! ```
//!
//! Only `logs/run.log` carries timestamps; every other file is a pure
//! function of the inputs and seeds.

pub mod gradcheck;
pub mod manifest;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use orchestra::baselines::oracle_ceiling;
use orchestra::domain::{write_jsonl, Label, TagDim};
use orchestra::grpo::{render_train_log, train, TrainConfig};
use orchestra::metrics::{render_csv, render_markdown, MetricReport};
use orchestra::orchestrator::{EpisodeConfig, Environment};
use orchestra::par::{self, ExecMode};
use orchestra::pipeline::{
    calibrate, evaluate_baseline, evaluate_policy, extend, standard_baselines, Calibration,
    ExtensionReport, Splits,
};
use orchestra::policy::checkpoint;
use orchestra::policy::{FeatureLayout, FeatureOptions, HeuristicPolicy, ParametricPolicy, PolicyParams};
use orchestra::profile::{DEFAULT_DELTA, DEFAULT_MIN_SUPPORT};
use orchestra::sim::{generate_dataset, Scenario, ScenarioConfig, Split};
use orchestra::Error;

use manifest::{with_seed, ExperimentManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

/// Minimum seed-mean B-Acc drop that `ablate` requires when profiles are
/// zeroed.
pub const ABLATION_MIN_DROP: f64 = 0.01;
pub const GRADCHECK_CONFIGS: usize = 20;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn acceptance(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ACCEPTANCE,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "orchestra", version, about = "Agentic detector orchestration experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Scenario config JSON
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Experiment manifest JSON
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Run a single seed (overrides the manifest's seed list)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads; 1 runs sequentially
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    #[arg(long, global = true)]
    pub per_call_cost: Option<f64>,
    /// Comma-separated scenario tool indices used for training
    #[arg(long, global = true, value_delimiter = ',')]
    pub tool_mask: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training config JSON
    #[arg(long, global = true)]
    pub train_config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Record per-step wall-clock time in the training log
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the dataset splits and registry of a scenario
    GenScenario,
    /// Calibrate tools and compile their profiles
    Profile,
    /// Train the policy with GRPO
    Train,
    /// Evaluate a checkpoint against the heuristic, baselines and oracle
    Eval,
    /// Evaluate a checkpoint with profile features zeroed
    Ablate,
    /// Evaluate a frozen checkpoint with extra tools added at inference
    Extend {
        /// Comma-separated scenario tool indices to add
        #[arg(long, value_delimiter = ',')]
        extension: Option<Vec<usize>>,
    },
    /// Finite-difference check of the policy and objective gradients
    Gradcheck {
        #[arg(long, default_value_t = GRADCHECK_CONFIGS)]
        configs: usize,
    },
}

/// Everything a command needs, resolved from flags and the manifest.
struct Context {
    global: GlobalArgs,
    manifest: ExperimentManifest,
    scenario: ScenarioConfig,
    out: PathBuf,
    mode: ExecMode,
}

impl Context {
    fn new(global: GlobalArgs) -> CliResult<Self> {
        let manifest = match &global.manifest {
            Some(p) => ExperimentManifest::load(p)?,
            None => ExperimentManifest::default(),
        };
        let path = global
            .config
            .clone()
            .or_else(|| manifest.scenario.clone())
            .ok_or_else(|| CliError::config("no scenario: pass --config or a manifest with `scenario`"))?;
        let scenario = ScenarioConfig::load(&path)?;
        let out = global
            .out
            .clone()
            .or_else(|| manifest.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let mode = match global.threads {
            Some(0) => return Err(CliError::config("--threads must be at least 1")),
            Some(1) => ExecMode::Sequential,
            Some(n) => {
                par::set_threads(n);
                ExecMode::Parallel
            }
            None => ExecMode::Parallel,
        };
        Ok(Context {
            global,
            manifest,
            scenario,
            out,
            mode,
        })
    }

    fn seeds(&self) -> Vec<u64> {
        match self.global.seed {
            Some(s) => vec![s],
            None if !self.manifest.seeds.is_empty() => self.manifest.seeds.clone(),
            None => vec![self.scenario.master_seed],
        }
    }

    /// The scenario with its master seed replaced by `seed`.
    fn scenario(&self, seed: u64) -> CliResult<Scenario> {
        let mut config = self.scenario.clone();
        config.master_seed = seed;
        Ok(Scenario::new(config)?)
    }

    fn train_mask(&self) -> Option<Vec<usize>> {
        self.global.tool_mask.clone().or_else(|| self.manifest.train_mask.clone())
    }

    fn eval_mask(&self) -> Option<Vec<usize>> {
        self.manifest.eval_mask.clone().or_else(|| self.train_mask())
    }

    fn episode(&self, base: EpisodeConfig) -> CliResult<EpisodeConfig> {
        let mut e = base;
        if let Some(r) = self.global.max_rounds {
            e.max_rounds = r;
        }
        if let Some(c) = self.global.per_call_cost {
            e.per_call_cost = c;
        }
        e.validate()?;
        Ok(e)
    }

    fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let path = self.global.train_config.as_ref().or(self.manifest.train_config.as_ref());
        let mut cfg = match path {
            Some(p) => TrainConfig::from_json(&read_input(p)?)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.global.steps {
            cfg.steps = s;
        }
        cfg.seed = seed;
        cfg.episode = self.episode(cfg.episode)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn dir(&self, sub: &str) -> CliResult<PathBuf> {
        let d = self.out.join(sub);
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn profiles_path(&self, seed: u64) -> PathBuf {
        match &self.manifest.profiles {
            Some(t) => with_seed(t, seed),
            None => self.out.join("profiles").join(format!("profiles-seed{seed}.json")),
        }
    }

    fn checkpoint_stem(&self, seed: u64) -> PathBuf {
        match &self.manifest.checkpoint {
            Some(t) => with_seed(t, seed),
            None => self.out.join("checkpoints").join(format!("policy-seed{seed}")),
        }
    }

    /// Use the manifest's profile file when one is named, otherwise
    /// calibrate on the registry.
    fn calibration(&self, scenario: &Scenario, splits: &Splits, mask: Option<&[usize]>, seed: u64) -> CliResult<Calibration> {
        let registry = scenario.registry(mask)?;
        if self.manifest.profiles.is_some() {
            let path = self.profiles_path(seed);
            let cal: Calibration = serde_json::from_str(&read_input(&path)?)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            if cal.profiles.len() != registry.len() {
                return Err(CliError::config(format!(
                    "{} holds {} profiles but the registry has {} tools",
                    path.display(),
                    cal.profiles.len(),
                    registry.len()
                )));
            }
            return Ok(cal);
        }
        Ok(calibrate(&registry, scenario, &splits.calib, DEFAULT_MIN_SUPPORT, DEFAULT_DELTA, self.mode)?)
    }

    fn load_checkpoint(&self, scenario: &Scenario, seed: u64) -> CliResult<PolicyParams> {
        let stem = self.checkpoint_stem(seed);
        if !stem.with_extension("json").exists() {
            return Err(CliError::config(format!("checkpoint {} not found", stem.display())));
        }
        let layout = FeatureLayout::new(scenario.schema().sizes());
        Ok(checkpoint::load(&stem, layout)?.0)
    }

    fn log(&self, line: &str) -> CliResult<()> {
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir("logs")?.join("run.log"))?;
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        writeln!(f, "{}.{:03} {line}", ts.as_secs(), ts.subsec_millis())?;
        Ok(())
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::GenScenario => cmd_gen_scenario(&ctx),
        Command::Profile => cmd_profile(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Ablate => cmd_ablate(&ctx),
        Command::Extend { extension } => cmd_extend(&ctx, extension),
        Command::Gradcheck { configs } => cmd_gradcheck(&ctx, configs),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn cmd_gen_scenario(ctx: &Context) -> CliResult<()> {
    let seeds = ctx.seeds();
    let scenarios = seeds.iter().map(|&s| ctx.scenario(s)).collect::<CliResult<Vec<_>>>()?;
    let dir = ctx.dir("scenario")?;
    write_json(&dir.join("scenario.json"), &ctx.scenario)?;
    write_json(&dir.join("registry.json"), &scenarios[0].tools)?;
    for (seed, scenario) in seeds.iter().zip(&scenarios) {
        println!("seed {seed}");
        for split in Split::ALL {
            let samples = generate_dataset(scenario, split);
            let file = fs::File::create(dir.join(format!("{}-seed{seed}.jsonl", split.as_str())))?;
            write_jsonl(std::io::BufWriter::new(file), &samples)?;
            let n = samples.len().max(1) as f64;
            let fakes = samples.iter().filter(|s| s.label == Label::Fake).count();
            println!("  {:<5} n={:<6} fake={:.3}", split.as_str(), samples.len(), fakes as f64 / n);
            for dim in TagDim::ALL {
                let values = scenario.schema().values(dim);
                let parts: Vec<String> = values
                    .iter()
                    .enumerate()
                    .map(|(v, name)| {
                        let c = samples.iter().filter(|s| s.observed_tags.get(dim) as usize == v).count();
                        format!("{name}={:.3}", c as f64 / n)
                    })
                    .collect();
                println!("        {:<8} {}", dim.as_str(), parts.join(" "));
            }
        }
    }
    ctx.log(&format!("gen-scenario seeds={seeds:?}"))
}

fn cmd_profile(ctx: &Context) -> CliResult<()> {
    let dir = ctx.dir("profiles")?;
    let mask = ctx.train_mask();
    for seed in ctx.seeds() {
        let scenario = ctx.scenario(seed)?;
        let splits = Splits::generate(&scenario);
        let registry = scenario.registry(mask.as_deref())?;
        let cal = calibrate(&registry, &scenario, &splits.calib, DEFAULT_MIN_SUPPORT, DEFAULT_DELTA, ctx.mode)?;
        write_json(&dir.join(format!("profiles-seed{seed}.json")), &cal)?;
        for (tool, p) in registry.iter().zip(&cal.profiles) {
            println!(
                "seed {seed} {:<12} accuracy={:?} bias={:?} strengths={} weaknesses={} hints={}",
                tool.name,
                p.overall.accuracy,
                p.overall.bias,
                p.strengths.len(),
                p.weaknesses.len(),
                p.conflict_hints.len()
            );
        }
        ctx.log(&format!("profile seed={seed}"))?;
    }
    Ok(())
}

fn cmd_train(ctx: &Context) -> CliResult<()> {
    let mask = ctx.train_mask();
    let logs = ctx.dir("logs")?;
    for seed in ctx.seeds() {
        let cfg = ctx.train_config(seed)?;
        let scenario = ctx.scenario(seed)?;
        let splits = Splits::generate(&scenario);
        let registry = scenario.registry(mask.as_deref())?;
        let cal = ctx.calibration(&scenario, &splits, mask.as_deref(), seed)?;
        if ctx.manifest.profiles.is_none() {
            write_json(&ctx.dir("profiles")?.join(format!("profiles-seed{seed}.json")), &cal)?;
        }
        let env = Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), cfg.episode)?;
        ctx.log(&format!("train seed={seed} steps={} start", cfg.steps))?;
        let outcome = train(&cfg, &splits.train, &env, ctx.mode, ctx.global.timing)?;
        fs::write(logs.join(format!("train-seed{seed}.csv")), render_train_log(&outcome.log)?)?;
        let meta = checkpoint::save(&ctx.checkpoint_stem(seed), &outcome.params, seed, cfg.steps)?;
        let first = outcome.log.first().map_or(f64::NAN, |s| s.mean_reward);
        let last = outcome.log.last().map_or(f64::NAN, |s| s.mean_reward);
        println!("seed {seed}: reward {first:.4} -> {last:.4}, checkpoint {}", &meta.sha256[..16]);
        ctx.log(&format!("train seed={seed} done sha256={}", meta.sha256))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    seed: u64,
    oracle_ceiling: f64,
    reports: Vec<(String, MetricReport)>,
}

fn cmd_eval(ctx: &Context) -> CliResult<()> {
    let mask = ctx.eval_mask();
    let reports_dir = ctx.dir("reports")?;
    let logs = ctx.dir("logs")?;
    for seed in ctx.seeds() {
        let scenario = ctx.scenario(seed)?;
        let episode = ctx.episode(ctx.train_config(seed)?.episode)?;
        let params = ctx.load_checkpoint(&scenario, seed)?;
        let splits = Splits::generate(&scenario);
        let registry = scenario.registry(mask.as_deref())?;
        let cal = ctx.calibration(&scenario, &splits, mask.as_deref(), seed)?;
        let env = Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), episode)?;
        let master = scenario.master_seed();
        let (trajs, policy) = evaluate_policy(&ParametricPolicy::greedy(&params), &splits.eval, &env, master, ctx.mode)?;
        let heuristic = HeuristicPolicy { a_emit: params.a_emit };
        let (_, heur) = evaluate_policy(&heuristic, &splits.eval, &env, master, ctx.mode)?;
        let mut reports = vec![("policy".to_string(), policy), ("heuristic".to_string(), heur)];
        for kind in standard_baselines(registry.len()) {
            let r = evaluate_baseline(&kind, &splits.eval, &registry, Some(&cal.metrics), master, ctx.mode)?;
            reports.push((kind.name(&registry), r));
        }
        let oracle = oracle_ceiling(&registry, &splits.eval, scenario.config.p_fake, episode.per_call_cost)?;
        write_jsonl(
            std::io::BufWriter::new(fs::File::create(logs.join(format!("eval-seed{seed}.jsonl")))?),
            &trajs,
        )?;
        fs::write(reports_dir.join(format!("eval-seed{seed}.csv")), render_csv(&reports)?)?;
        let md = format!("{}\nOracle ceiling: {oracle:.4}\n", render_markdown(&reports));
        fs::write(reports_dir.join(format!("eval-seed{seed}.md")), &md)?;
        write_json(
            &reports_dir.join(format!("eval-seed{seed}.json")),
            &EvalSummary {
                seed,
                oracle_ceiling: oracle,
                reports,
            },
        )?;
        println!("seed {seed}\n{md}");
        ctx.log(&format!("eval seed={seed}"))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationSeed {
    seed: u64,
    with_profiles: MetricReport,
    without_profiles: MetricReport,
    b_acc_drop: f64,
}

#[derive(Debug, Serialize)]
struct AblationReport {
    seeds: Vec<AblationSeed>,
    mean_b_acc_drop: f64,
    min_drop: f64,
    passed: bool,
}

fn cmd_ablate(ctx: &Context) -> CliResult<()> {
    let mask = ctx.eval_mask();
    let mut seeds = Vec::new();
    for seed in ctx.seeds() {
        let scenario = ctx.scenario(seed)?;
        let episode = ctx.episode(ctx.train_config(seed)?.episode)?;
        let params = ctx.load_checkpoint(&scenario, seed)?;
        let splits = Splits::generate(&scenario);
        let registry = scenario.registry(mask.as_deref())?;
        let cal = ctx.calibration(&scenario, &splits, mask.as_deref(), seed)?;
        let env = Environment::new(&registry, &cal.profiles, scenario.schema().sizes(), episode)?;
        let master = scenario.master_seed();
        let greedy = ParametricPolicy::greedy(&params);
        let (_, with_profiles) = evaluate_policy(&greedy, &splits.eval, &env, master, ctx.mode)?;
        let ablated = greedy.with_features(FeatureOptions { zero_profiles: true });
        let (_, without_profiles) = evaluate_policy(&ablated, &splits.eval, &env, master, ctx.mode)?;
        let drop = with_profiles.b_acc.unwrap_or(f64::NAN) - without_profiles.b_acc.unwrap_or(f64::NAN);
        println!("seed {seed}: b_acc drop without profiles {drop:.4}");
        seeds.push(AblationSeed {
            seed,
            with_profiles,
            without_profiles,
            b_acc_drop: drop,
        });
        ctx.log(&format!("ablate seed={seed}"))?;
    }
    let mean = seeds.iter().map(|s| s.b_acc_drop).sum::<f64>() / seeds.len() as f64;
    let passed = mean >= ABLATION_MIN_DROP;
    write_json(
        &ctx.dir("reports")?.join("ablate.json"),
        &AblationReport {
            seeds,
            mean_b_acc_drop: mean,
            min_drop: ABLATION_MIN_DROP,
            passed,
        },
    )?;
    if !passed {
        return Err(CliError::acceptance(format!(
            "mean b_acc drop {mean:.4} is below {ABLATION_MIN_DROP}"
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ExtendSummary {
    seeds: Vec<(u64, ExtensionReport)>,
    mean_b_acc_delta: f64,
}

fn cmd_extend(ctx: &Context, extension: Option<Vec<usize>>) -> CliResult<()> {
    let extension = extension
        .or_else(|| ctx.manifest.extension.clone())
        .ok_or_else(|| CliError::config("no extension tools: pass --extension or set `extension`"))?;
    let mut seeds = Vec::new();
    for seed in ctx.seeds() {
        let scenario = ctx.scenario(seed)?;
        let train_mask = ctx.train_mask().unwrap_or_else(|| (0..scenario.tools.len()).collect());
        let episode = ctx.episode(ctx.train_config(seed)?.episode)?;
        let params = ctx.load_checkpoint(&scenario, seed)?;
        let splits = Splits::generate(&scenario);
        let cal = ctx.calibration(&scenario, &splits, Some(&train_mask), seed)?;
        let report = extend(&params, &scenario, &splits, &train_mask, &extension, episode, &cal, ctx.mode)?;
        if report.hash_before != report.hash_after {
            return Err(CliError::acceptance(format!(
                "checkpoint changed during extension: {} -> {}",
                report.hash_before, report.hash_after
            )));
        }
        println!(
            "seed {seed}: b_acc {:.4} -> {:.4}",
            report.base.b_acc.unwrap_or(f64::NAN),
            report.extended.b_acc.unwrap_or(f64::NAN)
        );
        ctx.log(&format!("extend seed={seed}"))?;
        seeds.push((seed, report));
    }
    let mean = seeds
        .iter()
        .map(|(_, r)| r.b_acc_delta.unwrap_or(f64::NAN))
        .sum::<f64>()
        / seeds.len() as f64;
    println!("mean b_acc delta {mean:.4}");
    write_json(
        &ctx.dir("reports")?.join("extend.json"),
        &ExtendSummary {
            seeds,
            mean_b_acc_delta: mean,
        },
    )
}

fn cmd_gradcheck(ctx: &Context, configs: usize) -> CliResult<()> {
    let seed = ctx.seeds()[0];
    let scenario = ctx.scenario(seed)?;
    let report = gradcheck::run(&scenario, configs, seed)?;
    write_json(&ctx.dir("reports")?.join("gradcheck.json"), &report)?;
    println!(
        "log-prob max rel err {:.3e}, objective max rel err {:.3e}",
        report.log_prob_max_rel_err, report.objective_max_rel_err
    );
    ctx.log(&format!("gradcheck configs={configs}"))?;
    if !report.passed {
        return Err(CliError::acceptance("finite-difference check failed"));
    }
    Ok(())
}
