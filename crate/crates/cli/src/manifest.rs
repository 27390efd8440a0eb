//! Run manifests: one JSON sidecar per command run.
//!
//! Artifacts stay byte-reproducible; everything run-dependent (timestamps)
//! lives only here.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pcanet_core::{Dataset, Result};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetRef {
    pub name: String,
    pub content_hash: String,
    pub images: usize,
    pub m: usize,
    pub n: usize,
}

impl DatasetRef {
    pub fn of(d: &Dataset) -> Self {
        DatasetRef {
            name: d.name.clone(),
            content_hash: d.content_hash(),
            images: d.len(),
            m: d.m,
            n: d.n,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset: Option<DatasetRef>,
    pub artifacts: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// `out` with its extension replaced by `suffix` (`model.pcn` -> `model.<suffix>`).
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

pub fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub struct Recorder {
    command: &'static str,
    started: u128,
    config: serde_json::Value,
    seed: Option<u64>,
    dataset: Option<DatasetRef>,
    artifacts: Vec<String>,
    path: PathBuf,
}

impl Recorder {
    /// Starts a manifest for the run whose primary output is `out`.
    pub fn start(command: &'static str, out: &Path, config: impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Recorder {
            command,
            started: now_ms(),
            config: serde_json::to_value(config)?,
            seed,
            dataset: None,
            artifacts: Vec::new(),
            path: sidecar(out, "manifest.json"),
        })
    }

    /// File name of the manifest, for embedding in JSON artifacts.
    pub fn reference(&self) -> String {
        file_name(&self.path)
    }

    pub fn dataset(&mut self, d: &Dataset) {
        self.dataset = Some(DatasetRef::of(d));
    }

    pub fn artifact(&mut self, p: &Path) {
        self.artifacts.push(file_name(p));
    }

    pub fn finish(self) -> Result<PathBuf> {
        let m = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            seed: self.seed,
            dataset: self.dataset,
            artifacts: self.artifacts,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        };
        std::fs::write(&self.path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(self.path)
    }
}
