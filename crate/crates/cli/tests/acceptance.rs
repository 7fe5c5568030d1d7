//! Acceptance suite for the complementarity scenario.
//!
//! Prints one PASS/FAIL line per criterion and exits nonzero if any fails.
//! Targets are seed means over seeds 1..=5 unless stated otherwise.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orchestra::baselines::optimal_value;
use orchestra::domain::{Action, Label, TagVector, Trajectory, TrajectoryStep, ToolOutput};
use orchestra::grpo::{compute_reward, train, TrainConfig};
use orchestra::metrics::MetricReport;
use orchestra::orchestrator::{run_episode, Decision, EpisodeConfig, EpisodeSeeds, Environment, Observation, Policy};
use orchestra::par::ExecMode;
use orchestra::pipeline::{calibrate, extend, run_standard, ExtensionReport, SeedResult, Splits};
use orchestra::profile::{DEFAULT_DELTA, DEFAULT_MIN_SUPPORT};
use orchestra::sim::{Scenario, ScenarioConfig, ToolSpec};
use orchestra_cli::gradcheck;

const SCENARIO_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/scenario_complement.json");
const TRAIN_CONFIG_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/train_complement.json");
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TRAIN_MASK: [usize; 3] = [0, 1, 3];
const EXTENSION: [usize; 1] = [2];

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn scenario(seed: u64) -> Scenario {
    let mut cfg = ScenarioConfig::load(Path::new(SCENARIO_PATH)).expect("scenario file");
    cfg.master_seed = seed;
    Scenario::new(cfg).expect("valid scenario")
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn b(r: &MetricReport) -> f64 {
    r.b_acc.expect("both classes present")
}

fn gap(r: &MetricReport) -> f64 {
    r.bias_gap.expect("both classes present")
}

fn baseline<'a>(res: &'a SeedResult, name: &str) -> &'a MetricReport {
    &res.baselines.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("baseline {name}")).1
}

fn rate(t: &ToolSpec, fake: bool, tags: &TagVector) -> f64 {
    let mut r = if fake { t.base_tpr } else { t.base_tnr };
    for m in &t.modifiers {
        if tags.get(m.tag.dim) == m.tag.value {
            r += m.delta;
        }
    }
    r.clamp(0.01, 0.99)
}

fn enumerate_patterns(registry: &[ToolSpec], tags: &TagVector, p_fake: f64) -> f64 {
    (0..1u32 << registry.len())
        .map(|pattern| {
            let (mut pf, mut pr) = (p_fake, 1.0 - p_fake);
            for (i, t) in registry.iter().enumerate() {
                let fake = pattern >> i & 1 == 1;
                let (tpr, tnr) = (rate(t, true, tags), rate(t, false, tags));
                pf *= if fake { tpr } else { 1.0 - tpr };
                pr *= if fake { 1.0 - tnr } else { tnr };
            }
            pf.max(pr)
        })
        .sum()
}

fn criterion_1() -> Outcome {
    let sc = scenario(1);
    let registry = sc.registry(None).unwrap();
    let sizes = sc.schema().sizes();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for a in 0..sizes[0] {
        for b in 0..sizes[1] {
            for c in 0..sizes[2] {
                let tags = TagVector::new(a as u8, b as u8, c as u8);
                let dp = optimal_value(&registry, &tags, sc.config.p_fake, 0.0).unwrap().value;
                worst = worst.max((dp - enumerate_patterns(&registry, &tags, sc.config.p_fake)).abs());
                cells += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "oracle ceiling matches enumeration",
        passed: worst < 1e-12 && secs < 1.0,
        detail: format!("{cells} tag cells x 16 patterns, max |diff| {worst:.1e}, {secs:.3}s"),
    }
}

struct SeedRun {
    standard: SeedResult,
    train_secs: f64,
    extension: ExtensionReport,
}

fn run_seed(seed: u64) -> SeedRun {
    let sc = scenario(seed);
    let mut cfg = TrainConfig::from_json(&fs::read_to_string(TRAIN_CONFIG_PATH).expect("train config")).unwrap();
    cfg.seed = seed;
    let start = Instant::now();
    let (standard, _, _) = run_standard(&sc, &cfg, ExecMode::Parallel).expect("standard run");
    let train_secs = start.elapsed().as_secs_f64();

    let splits = Splits::generate(&sc);
    let registry = sc.registry(Some(&TRAIN_MASK)).unwrap();
    let cal = calibrate(&registry, &sc, &splits.calib, DEFAULT_MIN_SUPPORT, DEFAULT_DELTA, ExecMode::Parallel).unwrap();
    let env = Environment::new(&registry, &cal.profiles, sc.schema().sizes(), cfg.episode).unwrap();
    let trained = train(&cfg, &splits.train, &env, ExecMode::Parallel, false).expect("subset training");
    let extension = extend(&trained.params, &sc, &splits, &TRAIN_MASK, &EXTENSION, cfg.episode, &cal, ExecMode::Parallel)
        .expect("extension");
    SeedRun {
        standard,
        train_secs,
        extension,
    }
}

fn criterion_2(runs: &[SeedRun]) -> Outcome {
    let gains: Vec<f64> = runs.iter().map(|r| r.standard.last10_reward - r.standard.first10_reward).collect();
    let slowest = runs.iter().map(|r| r.train_secs).fold(0.0, f64::max);
    let min_gain = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome {
        id: 2,
        name: "training improves reward",
        passed: min_gain >= 0.3 && slowest < 300.0,
        detail: format!(
            "first10 -> last10 gains {:?}, min {min_gain:.4}; slowest seed {slowest:.1}s",
            gains.iter().map(|g| (g * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    }
}

fn criterion_3(runs: &[SeedRun], names: &[String]) -> Outcome {
    let policy = mean(runs.iter().map(|r| b(&r.standard.policy)));
    let (best_name, best) = names
        .iter()
        .map(|n| (n.clone(), mean(runs.iter().map(|r| b(baseline(&r.standard, n))))))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let oracle = mean(runs.iter().map(|r| r.standard.oracle_ceiling));
    Outcome {
        id: 3,
        name: "beats best single tool, near oracle",
        passed: policy - best >= 0.02 && (oracle - policy).abs() <= 0.05,
        detail: format!(
            "policy {policy:.4}, best single {best_name} {best:.4} (margin {:+.4}), oracle {oracle:.4} (policy - oracle {:+.4})",
            policy - best,
            policy - oracle
        ),
    }
}

fn criterion_4(runs: &[SeedRun], singles: &[String]) -> Outcome {
    let policy = mean(runs.iter().map(|r| b(&r.standard.policy)));
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, _) in &runs[0].standard.baselines {
        let m = mean(runs.iter().map(|r| b(baseline(&r.standard, name))));
        ok &= policy >= m;
        lines.push(format!("{name} {m:.4}"));
    }
    let or_name = runs[0]
        .standard
        .baselines
        .iter()
        .map(|(n, _)| n)
        .find(|n| n.starts_with("or("))
        .unwrap()
        .clone();
    let seed_mean = |name: &str, f: fn(&MetricReport) -> Option<f64>| {
        mean(runs.iter().map(|r| f(baseline(&r.standard, name)).unwrap()))
    };
    let or_f = seed_mean(&or_name, |r| r.f_acc);
    let or_r = seed_mean(&or_name, |r| r.r_acc);
    let signature = singles
        .iter()
        .all(|t| or_f > seed_mean(t, |r| r.f_acc) && or_r < seed_mean(t, |r| r.r_acc));
    Outcome {
        id: 4,
        name: "beats naive ensembles",
        passed: ok && signature,
        detail: format!(
            "policy {policy:.4} vs {}; OR f_acc {or_f:.4} r_acc {or_r:.4} signature {}",
            lines.join(", "),
            if signature { "holds" } else { "missing" }
        ),
    }
}

fn criterion_5(runs: &[SeedRun]) -> Outcome {
    let policy = mean(runs.iter().map(|r| gap(&r.standard.policy)));
    let ta = mean(runs.iter().map(|r| gap(baseline(&r.standard, "T_A"))));
    let tb = mean(runs.iter().map(|r| gap(baseline(&r.standard, "T_B"))));
    Outcome {
        id: 5,
        name: "bias mitigation",
        passed: policy <= 0.08 && ta >= 0.30 && tb >= 0.30,
        detail: format!("policy bias gap {policy:.4}; T_A {ta:.4}; T_B {tb:.4}"),
    }
}

fn criterion_6(runs: &[SeedRun]) -> Outcome {
    let deltas: Vec<f64> = runs.iter().map(|r| r.extension.b_acc_delta.unwrap()).collect();
    let d = mean(deltas.iter().copied());
    let frozen = runs.iter().all(|r| r.extension.hash_before == r.extension.hash_after);
    Outcome {
        id: 6,
        name: "train-free extension",
        passed: d >= 0.01 && frozen,
        detail: format!(
            "mean b_acc delta {d:+.4} (per seed {:?}); base {:.4} -> extended {:.4}; checkpoints {}",
            deltas.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>(),
            mean(runs.iter().map(|r| b(&r.extension.base))),
            mean(runs.iter().map(|r| b(&r.extension.extended))),
            if frozen { "unchanged" } else { "CHANGED" }
        ),
    }
}

fn criterion_7(runs: &[SeedRun]) -> Outcome {
    let with = mean(runs.iter().map(|r| b(&r.standard.policy)));
    let without = mean(runs.iter().map(|r| b(&r.standard.policy_no_profiles)));
    Outcome {
        id: 7,
        name: "profile ablation",
        passed: with - without >= 0.01,
        detail: format!("with profiles {with:.4}, zeroed {without:.4}, drop {:+.4}", with - without),
    }
}

fn criterion_8() -> Outcome {
    let r = gradcheck::run(&scenario(1), 20, 1).expect("gradcheck");
    Outcome {
        id: 8,
        name: "gradient correctness",
        passed: r.configs >= 20 && r.log_prob_max_rel_err < 1e-4 && r.objective_max_rel_err < 1e-3,
        detail: format!(
            "{} configs; log-prob max rel err {:.2e}; objective max rel err {:.2e}",
            r.configs, r.log_prob_max_rel_err, r.objective_max_rel_err
        ),
    }
}

fn step_call(round: u32, tool: usize, verdict: Label, tokens: u32) -> TrajectoryStep {
    TrajectoryStep {
        round,
        action: Action::CallTool { tool_id: tool },
        analysis_tokens: tokens,
        tool_output: Some(ToolOutput {
            tool_id: tool,
            verdict,
            confidence: None,
            round,
        }),
    }
}

fn two_step(verdict: Label, tokens: u32) -> Trajectory {
    Trajectory {
        sample_id: 0,
        steps: vec![
            step_call(1, 0, verdict, tokens),
            TrajectoryStep {
                round: 2,
                action: Action::Stop { verdict },
                analysis_tokens: 12,
                tool_output: None,
            },
        ],
        final_verdict: Some(verdict),
        format_valid: true,
    }
}

fn criterion_9() -> Outcome {
    let cases = [
        (two_step(Label::Fake, 12), Label::Fake, 1.0),
        (two_step(Label::Fake, 12), Label::Real, -1.0),
        (two_step(Label::Fake, 5), Label::Fake, 0.8),
    ];
    let got: Vec<f64> = cases.iter().map(|(t, gt, _)| compute_reward(t, *gt, 0.0).unwrap().total).collect();
    Outcome {
        id: 9,
        name: "reward unit suite",
        passed: got.iter().zip(&cases).all(|(g, c)| *g == c.2),
        detail: format!("totals {got:?} expected [1.0, -1.0, 0.8]"),
    }
}

fn criterion_10() -> Outcome {
    // (tn, tp) per 10_000 real and 10_000 fake samples, and the printed B-Acc
    let rows = [(8667, 8610, 0.8638), (8822, 8223, 0.8523)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (tn, tp, printed) in rows {
        let r = MetricReport::from_counts(tp, 10_000 - tn, tn, 10_000 - tp).unwrap();
        let x = r.b_acc.unwrap();
        // the exact values sit on a 4-decimal midpoint, so both neighbours are valid roundings
        let admissible = (x - printed).abs() <= 0.5e-4 + 1e-12;
        ok &= admissible;
        parts.push(format!("{x:.5} -> printed {printed:.4} {}", if admissible { "ok" } else { "MISMATCH" }));
    }
    Outcome {
        id: 10,
        name: "metrics arithmetic",
        passed: ok,
        detail: parts.join("; "),
    }
}

struct UniformPolicy {
    tools: usize,
}

impl Policy for UniformPolicy {
    fn decide(&self, _obs: &Observation<'_>, seed: u64) -> orchestra::Result<Decision> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(0..self.tools + 2);
        let action = if k < self.tools {
            Action::CallTool { tool_id: k }
        } else {
            Action::Stop {
                verdict: if k == self.tools { Label::Real } else { Label::Fake },
            }
        };
        Ok(Decision {
            action,
            analysis_tokens: 12,
            log_prob: None,
        })
    }
}

fn invariant_ok(t: &Trajectory, m: usize, max_rounds: u32) -> bool {
    let mut seen = HashSet::new();
    let rounds_ok = t.steps.iter().enumerate().all(|(i, s)| s.round == i as u32 + 1);
    let steps_ok = t.steps.iter().enumerate().all(|(i, s)| match (s.action, &s.tool_output) {
        (Action::CallTool { tool_id }, Some(o)) => tool_id < m && o.tool_id == tool_id && seen.insert(tool_id),
        (Action::Stop { verdict }, None) => i + 1 == t.steps.len() && t.final_verdict == Some(verdict),
        _ => false,
    });
    rounds_ok && steps_ok && seen.len() <= max_rounds as usize && t.final_verdict.is_some()
}

fn criterion_11() -> Outcome {
    let sc = scenario(1);
    let splits = Splits::generate(&sc);
    let registry = sc.registry(None).unwrap();
    let cal = calibrate(&registry, &sc, &splits.calib, DEFAULT_MIN_SUPPORT, DEFAULT_DELTA, ExecMode::Parallel).unwrap();
    let policy = UniformPolicy { tools: registry.len() };
    let mut bad = 0;
    let n = 100_000u64;
    for i in 0..n {
        let episode = EpisodeConfig {
            max_rounds: 1 + (i % 5) as u32,
            ..EpisodeConfig::default()
        };
        let env = Environment::new(&registry, &cal.profiles, sc.schema().sizes(), episode).unwrap();
        let s = &splits.train[i as usize % splits.train.len()];
        match run_episode(s, &policy, &env, EpisodeSeeds::shared(i)) {
            Ok(t) if invariant_ok(&t, registry.len(), episode.max_rounds) => {}
            _ => bad += 1,
        }
    }
    Outcome {
        id: 11,
        name: "orchestrator invariants",
        passed: bad == 0,
        detail: format!("{n} random-policy episodes, {bad} violations"),
    }
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_orchestra"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    let mut ok = true;
    for d in &dirs {
        let common = [
            "--config",
            SCENARIO_PATH,
            "--train-config",
            TRAIN_CONFIG_PATH,
            "--seed",
            "1",
            "--out",
            d.to_str().unwrap(),
        ];
        ok &= cli(&[&["train"], &common[..]].concat());
        ok &= cli(&[&["eval"], &common[..]].concat());
    }
    let files = [
        "logs/train-seed1.csv",
        "logs/eval-seed1.jsonl",
        "checkpoints/policy-seed1.bin",
        "reports/eval-seed1.csv",
        "reports/eval-seed1.md",
        "reports/eval-seed1.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .filter(|f| fs::read(dirs[0].join(f)).ok() != fs::read(dirs[1].join(f)).ok() || !dirs[0].join(f).exists())
        .copied()
        .collect();
    Outcome {
        id: 12,
        name: "determinism",
        passed: ok && differing.is_empty(),
        detail: format!(
            "train+eval twice at seed 1: commands {}, {} of {} artifacts differ {differing:?}",
            if ok { "succeeded" } else { "FAILED" },
            differing.len(),
            files.len()
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut out = vec![criterion_1()];
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    let registry = scenario(1).registry(None).unwrap();
    let singles: Vec<String> = registry.iter().map(|t| t.name.clone()).collect();

    println!("seed-mean B-Acc over seeds {SEEDS:?}:");
    println!("  {:<22} {:.4}", "policy", mean(runs.iter().map(|r| b(&r.standard.policy))));
    println!("  {:<22} {:.4}", "policy (no profiles)", mean(runs.iter().map(|r| b(&r.standard.policy_no_profiles))));
    println!("  {:<22} {:.4}", "heuristic", mean(runs.iter().map(|r| b(&r.standard.heuristic))));
    for (name, _) in &runs[0].standard.baselines {
        println!("  {:<22} {:.4}", name, mean(runs.iter().map(|r| b(baseline(&r.standard, name)))));
    }
    println!("  {:<22} {:.4}", "oracle ceiling", mean(runs.iter().map(|r| r.standard.oracle_ceiling)));

    out.push(criterion_2(&runs));
    out.push(criterion_3(&runs, &singles));
    out.push(criterion_4(&runs, &singles));
    out.push(criterion_5(&runs));
    out.push(criterion_6(&runs));
    out.push(criterion_7(&runs));
    out.push(criterion_8());
    out.push(criterion_9());
    out.push(criterion_10());
    out.push(criterion_11());
    out.push(criterion_12());

    println!();
    for o in &out {
        println!(
            "{} criterion {:>2} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    let failed = out.iter().filter(|o| !o.passed).count();
    println!("\n{} of {} criteria passed in {:.0}s", out.len() - failed, out.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
