//! Per-run manifest: what was run, when, and the hash of every file written.
//!
//! Timestamps live here and nowhere else, so every other artifact of a run is
//! a pure function of its configuration and seed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::certify::hex_digest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub runtime_s: f64,
    pub artifacts: Vec<Artifact>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path).map_err(io_err(path))?))
}

impl RunManifest {
    pub fn start(command: &str, config_path: Option<PathBuf>, master_seed: Option<u64>, output_dir: PathBuf) -> Self {
        let t = now();
        Self {
            command: command.to_string(),
            config_path,
            master_seed,
            output_dir,
            started_at: t,
            finished_at: t,
            runtime_s: 0.0,
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` to `name` inside the output directory and records its
    /// hash.
    pub fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.output_dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: hex_digest(bytes),
        });
        Ok(path)
    }

    /// Stamps the finish time and writes `manifest.json`.
    pub fn finish(&mut self) -> Result<PathBuf> {
        self.finished_at = now();
        self.runtime_s = (self.finished_at - self.started_at).max(0.0);
        let path = self.output_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Artifacts whose current content no longer matches the recorded hash.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for a in &self.artifacts {
            if sha256_file(&self.output_dir.join(&a.path))? != a.sha256 {
                stale.push(a.path.clone());
            }
        }
        Ok(stale)
    }
}
