//! The run manifest: an append-only index of produced artifacts, written
//! atomically by the command that owns the run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gentest_core::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub kind: String,
    pub name: String,
    pub path: String,
    pub fingerprint: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    /// Load the manifest of a run directory, or start a fresh one bound to
    /// the given config hash. A manifest from a different config is
    /// discarded: its artifacts do not belong to this run.
    pub fn load_or_new(dir: &Path, config_hash: &str, master_seed: u64, version: &str) -> Self {
        let path = Self::path_in(dir);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                if m.config_hash == config_hash {
                    return m;
                }
                log::warn!(
                    "manifest in {} belongs to config {}, starting over",
                    dir.display(),
                    &m.config_hash[..12.min(m.config_hash.len())]
                );
            }
        }
        RunManifest {
            config_hash: config_hash.to_string(),
            version: version.to_string(),
            master_seed,
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Insert or replace an artifact entry keyed by (kind, name).
    pub fn record(&mut self, entry: ArtifactEntry) {
        if let Some(existing) = self
            .artifacts
            .iter_mut()
            .find(|a| a.kind == entry.kind && a.name == entry.name)
        {
            *existing = entry;
        } else {
            self.artifacts.push(entry);
        }
    }

    pub fn find(&self, kind: &str, name: &str) -> Option<&ArtifactEntry> {
        self.artifacts
            .iter()
            .find(|a| a.kind == kind && a.name == name)
    }

    /// Atomic write: serialize to a sibling temp file, then rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path_in(dir);
        let tmp = dir.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
