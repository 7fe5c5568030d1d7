//! Experiment manifests.
//!
//! ```json
//! {
//!   "scenario": "../scenarios/scenario_complement.json",
//!   "train_config": "train.json",
//!   "seeds": [1, 2, 3, 4, 5],
//!   "out": "runs/complement",
//!   "train_mask": [0, 1, 3],
//!   "extension": [2]
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. `profiles`
//! and `checkpoint` may contain `{seed}`; they default to
//! `<out>/profiles/profiles-seed{seed}.json` and
//! `<out>/checkpoints/policy-seed{seed}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use orchestra::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub train_config: Option<PathBuf>,
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Scenario tool indices used for training (and evaluation by default).
    #[serde(default)]
    pub train_mask: Option<Vec<usize>>,
    /// Scenario tool indices used for evaluation.
    #[serde(default)]
    pub eval_mask: Option<Vec<usize>>,
    /// Scenario tool indices added at inference time by `extend`.
    #[serde(default)]
    pub extension: Option<Vec<usize>>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: ExperimentManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut m.scenario,
            &mut m.train_config,
            &mut m.profiles,
            &mut m.checkpoint,
            &mut m.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }
}

/// Substitute `{seed}` in a path template.
pub fn with_seed(template: &Path, seed: u64) -> PathBuf {
    PathBuf::from(template.to_string_lossy().replace("{seed}", &seed.to_string()))
}
