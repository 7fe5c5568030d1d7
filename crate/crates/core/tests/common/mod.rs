#![allow(dead_code)]

use orchestra::pipeline::{calibrate, Calibration, Splits};
use orchestra::par::ExecMode;
use orchestra::profile::{DEFAULT_DELTA, DEFAULT_MIN_SUPPORT};
use orchestra::sim::{Scenario, ScenarioConfig};

pub const COMPLEMENT: &str = include_str!("../../../../scenarios/scenario_complement.json");

pub fn complement() -> Scenario {
    Scenario::new(ScenarioConfig::from_json(COMPLEMENT).unwrap()).unwrap()
}

/// The complementarity scenario with smaller splits and another seed.
pub fn small(seed: u64, n: usize) -> Scenario {
    let mut cfg = ScenarioConfig::from_json(COMPLEMENT).unwrap();
    cfg.master_seed = seed;
    cfg.n_train = n;
    cfg.n_calib = n;
    cfg.n_eval = n;
    Scenario::new(cfg).unwrap()
}

pub fn calibrated(scenario: &Scenario) -> (Splits, Calibration) {
    let splits = Splits::generate(scenario);
    let registry = scenario.registry(None).unwrap();
    let cal = calibrate(
        &registry,
        scenario,
        &splits.calib,
        DEFAULT_MIN_SUPPORT,
        DEFAULT_DELTA,
        ExecMode::Sequential,
    )
    .unwrap();
    (splits, cal)
}
