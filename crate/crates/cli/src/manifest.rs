//! Run manifest: what produced an output directory, and digests of its files.

use std::collections::BTreeMap;

use bankbm_core::analysis::BUNDLE_FILES;
use bankbm_core::panel::SizeLabel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::stages::{assignments_file, contributions_file, forest_file, votes_file, ANALYSIS, FIT_SUMMARY, REJECTIONS};
use crate::CliError;

pub const MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub input_digest: String,
    pub config_digest: String,
    /// The effective configuration, enough to rerun.
    pub config: serde_json::Value,
    /// sha256 of every artifact present, by file name.
    pub outputs: BTreeMap<String, String>,
}

/// Artifact names a full run can produce.
pub fn artifact_names() -> Vec<String> {
    let mut names = vec![REJECTIONS.to_string(), FIT_SUMMARY.to_string(), ANALYSIS.to_string()];
    for s in SizeLabel::ALL {
        names.extend([forest_file(s), contributions_file(s), assignments_file(s), votes_file(s)]);
    }
    names.extend(BUNDLE_FILES.iter().map(|f| f.to_string()));
    names
}

pub fn write_manifest(cfg: &PipelineConfig, input_digest: &str) -> Result<RunManifest, CliError> {
    let io = |e: std::io::Error| CliError::Compute { stage: "manifest".into(), message: e.to_string() };
    let mut outputs = BTreeMap::new();
    for name in artifact_names() {
        let path = cfg.out_dir.join(&name);
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(io)?;
            outputs.insert(name, hex::encode(Sha256::digest(&bytes)));
        }
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed()?,
        input_digest: input_digest.to_string(),
        config_digest: cfg.digest(),
        config: cfg.effective(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(cfg.out_dir.join(MANIFEST), text + "\n").map_err(io)?;
    Ok(manifest)
}
