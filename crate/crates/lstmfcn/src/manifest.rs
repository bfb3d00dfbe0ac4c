//! Run manifests written next to every command's artifacts.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective settings of the command, flags and defaults alike.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    /// Start time in seconds since the Unix epoch.
    pub started_at: f64,
    pub wall_clock_seconds: f64,
}

/// Collects a manifest while a command runs.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            wall_clock_seconds: 0.0,
        };
        Self { manifest, start: Instant::now() }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Writes `<command>_manifest.json` into `dir` and returns its path.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        let path = dir.join(format!("{}_manifest.json", self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Mismatch(format!("manifest: {e}")))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        column: e.column(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_manifest_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ManifestBuilder::start("train", serde_json::json!({"epochs": 3}), Some(7));
        b.input(Path::new("a_TRAIN.tsv"));
        b.output(&dir.path().join("model.ckpt"));
        let path = b.finish(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "train_manifest.json");
        let m = read_manifest(&path).unwrap();
        assert_eq!((m.command.as_str(), m.seed, m.inputs.len(), m.outputs.len()), ("train", Some(7), 1, 1));
        assert_eq!(m.config["epochs"], 3);
        assert!(m.wall_clock_seconds >= 0.0 && m.started_at > 0.0);
    }
}
