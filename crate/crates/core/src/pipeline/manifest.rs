use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::transport::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Audit trail of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    /// Digest of the most recent config echo.
    pub config_digest: String,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_digest: String,
    /// File name → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Stage-specific settings worth auditing (temperatures, counts, ...).
    pub params: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn load_or_new(dir: &Path, run_id: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self {
                run_id: run_id.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                ..Self::default()
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))
    }

    /// Files whose current digest differs from the recorded one (or that
    /// have disappeared).
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        let mut seen = BTreeMap::new();
        for rec in self.stages.values() {
            for (name, digest) in &rec.outputs {
                seen.insert(name.clone(), digest.clone());
            }
        }
        for (name, digest) in seen {
            match file_digest(&dir.join(&name)) {
                Ok(d) if d == digest => {}
                _ => bad.push(name),
            }
        }
        bad
    }
}
