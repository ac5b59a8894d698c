//! Run manifests: a sidecar JSON written next to every artifact that
//! records exactly what produced it — the command, the fully resolved
//! configuration, the seeds, SHA-256 digests of every input file, the
//! artifact paths, and the tool version. Deliberately no timestamps, so a
//! re-run with identical inputs writes a byte-identical manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use otae_core::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    /// Subcommand that produced the artifacts.
    pub command: String,
    /// Fully resolved configuration after flag/file/default merging.
    pub config: serde_json::Value,
    /// Named seeds the run derived its randomness from.
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of each input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    /// Paths of everything this run wrote (other than the manifest itself).
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: "otae",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seeds: BTreeMap::new(),
            input_digests: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    /// Records an input file by digesting its current contents.
    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        self.input_digests
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn with_artifact(mut self, path: &Path) -> Self {
        self.artifacts.push(path.display().to_string());
        self
    }

    /// Writes the manifest as `<artifact>.manifest.json` next to the given
    /// primary artifact and returns the path written.
    pub fn write_next_to(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("manifest serialisation failed: {e}")))?;
        std::fs::write(&path, json.as_bytes()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}
