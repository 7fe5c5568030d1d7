//! Checkpoints: `<stem>.json` metadata next to `<stem>.bin`, the flat
//! parameter vector as little-endian f64.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::FeatureLayout;
use super::network::PolicyParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub tag_sizes: [usize; 3],
    pub global_dim: usize,
    pub tool_input_dim: usize,
    pub hidden: usize,
    pub tau: f64,
    pub a_emit: u32,
    pub seed: u64,
    pub steps: usize,
    pub num_params: usize,
    /// Hex SHA-256 of the `.bin` payload.
    pub sha256: String,
}

pub fn params_bytes(params: &PolicyParams) -> Vec<u8> {
    params.theta.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn params_hash(params: &PolicyParams) -> String {
    hex::encode(Sha256::digest(params_bytes(params)))
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save(stem: &Path, params: &PolicyParams, seed: u64, steps: usize) -> Result<CheckpointMeta> {
    params.validate()?;
    let bytes = params_bytes(params);
    let meta = CheckpointMeta {
        tag_sizes: params.features.tag_sizes,
        global_dim: params.features.global_dim(),
        tool_input_dim: params.features.tool_input_dim(),
        hidden: params.hidden,
        tau: params.tau,
        a_emit: params.a_emit,
        seed,
        steps,
        num_params: params.theta.len(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    let (json, bin) = paths(stem);
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin, &bytes)?;
    fs::write(&json, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

/// Load a checkpoint and check it against the scenario's tag layout.
pub fn load(stem: &Path, expected: FeatureLayout) -> Result<(PolicyParams, CheckpointMeta)> {
    let (json, bin) = paths(stem);
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&json)?)?;
    let bytes = fs::read(&bin)?;
    let bad = |msg: String| Err(Error::Checkpoint(format!("{}: {msg}", stem.display())));
    if meta.tag_sizes != expected.tag_sizes
        || meta.global_dim != expected.global_dim()
        || meta.tool_input_dim != expected.tool_input_dim()
    {
        return bad(format!(
            "feature layout {:?} does not match the scenario's {:?}",
            meta.tag_sizes, expected.tag_sizes
        ));
    }
    if bytes.len() != meta.num_params * 8 {
        return bad(format!("expected {} parameters, file holds {} bytes", meta.num_params, bytes.len()));
    }
    if hex::encode(Sha256::digest(&bytes)) != meta.sha256 {
        return bad("parameter hash mismatch".into());
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = PolicyParams {
        features: expected,
        hidden: meta.hidden,
        tau: meta.tau,
        a_emit: meta.a_emit,
        theta,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", stem.display())))?;
    Ok((params, meta))
}
