//! Run manifest: written when a run starts and rewritten when it ends.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// `None` when the bundled desk scenario was used.
    pub scenario_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Hash of every setting that affects results; see [`config_hash`].
    pub config_hash: String,
    /// The settings that went into the hash.
    pub config: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Git-style content hash: SHA-256 over `"config <len>\0"` followed by the
/// canonical JSON of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let body = serde_json::to_string(config).expect("JSON values always serialize");
    let mut h = Sha256::new();
    h.update(format!("config {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, scenario_path: Option<&Path>, seed: u64, out: &Path, config: serde_json::Value) -> Result<Self> {
        let m = Self {
            command: command.to_string(),
            scenario_path: scenario_path.map(Path::to_path_buf),
            seed,
            output_dir: out.to_path_buf(),
            config_hash: config_hash(&config),
            config,
            started_unix: now(),
            finished_unix: None,
            status: RunStatus::Running,
        };
        m.write()?;
        Ok(m)
    }

    pub fn finish(&mut self, status: RunStatus) -> Result<()> {
        self.status = status;
        self.finished_unix = Some(now());
        self.write()
    }

    fn write(&self) -> Result<()> {
        let path = self.output_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_depends_on_every_field() {
        let a = config_hash(&json!({"seed": 1, "episodes": 5}));
        assert_eq!(a, config_hash(&json!({"seed": 1, "episodes": 5})));
        assert_ne!(a, config_hash(&json!({"seed": 2, "episodes": 5})));
        assert_ne!(a, config_hash(&json!({"seed": 1, "episodes": 6})));
        assert_eq!(a.len(), 64);
    }
}
