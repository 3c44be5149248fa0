//! Run manifest written next to every output set.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ConfigDocument;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
    pub defaults_applied: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub files: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn config_hash(doc: &ConfigDocument) -> String {
    let digest = Sha256::digest(doc.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(doc: &ConfigDocument, command: Vec<String>) -> Self {
        Self {
            tool: "gfmsim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config_hash: config_hash(doc),
            defaults_applied: doc.applied_defaults.clone(),
            started_unix_s: now(),
            finished_unix_s: 0,
            files: Vec::new(),
        }
    }

    pub fn add_file(&mut self, name: impl Into<String>) {
        self.files.push(name.into());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix_s = now();
        self.files.sort();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self)
    }
}
