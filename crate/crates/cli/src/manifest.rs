use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// Provenance record written next to the outputs of every artifact-producing command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Canonical resolved configuration, when the command has one.
    pub config: Option<String>,
    pub config_hash: Option<String>,
    /// Assignments read from `--config`, then those given as flags (which win).
    pub config_file_entries: Vec<String>,
    pub flag_entries: Vec<String>,
    pub corpus_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            config: None,
            config_hash: None,
            config_file_entries: Vec::new(),
            flag_entries: Vec::new(),
            corpus_hashes: BTreeMap::new(),
            seed: None,
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished = now();
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
