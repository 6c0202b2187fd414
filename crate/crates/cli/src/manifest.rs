//! Run manifests written next to every artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use beamkit::channel::write_atomic;
use serde::Serialize;

/// One input file and the checksum it was read with.
#[derive(Debug, Serialize)]
pub struct InputRef {
    pub path: String,
    pub crc64: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    /// Every resolved setting, after flags, config file and defaults.
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    pub threads: usize,
    pub wall_time_s: f64,
    /// Per-epoch seconds since the start of training, when applicable.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epoch_wall_times: Vec<f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            tool: "beamkit",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            threads: 1,
            wall_time_s: 0.0,
            epoch_wall_times: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }
}

/// `<artifact>.run.json`.
pub fn manifest_for(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// File name used by artifacts to point at their manifest.
pub fn manifest_name(artifact: &Path) -> String {
    manifest_for(artifact)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn display(p: &Path) -> String {
    p.display().to_string()
}
