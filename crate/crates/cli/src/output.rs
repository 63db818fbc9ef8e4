//! Output directories, content hashes and run-manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use encgan_core::persistio::FORMAT_VERSION;
use encgan_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "ENCGAN_SEED";
pub const MANIFEST_FILE: &str = "run-manifest.json";

/// `ENCGAN_SEED`, when set, replaces every configured or flagged seed.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(vec![format!("{SEED_ENV}: expected an unsigned integer, got {v:?}")])),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(vec![format!("{SEED_ENV}: {e}")])),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Reads an input file and records its hash under its file name.
pub fn read_input(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    inputs.insert(file_name(path), sha256_hex(&bytes));
    Ok(bytes)
}

/// What a run did, written next to its outputs. Contains no timestamps or
/// absolute paths so identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub encgan_version: &'static str,
    pub checkpoint_format: u32,
    pub seed: u64,
    /// SHA-256 of the canonical JSON in `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub label: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, config: serde_json::Value) -> Self {
        let canonical = serde_json::to_string(&config).expect("JSON value serializes");
        Self {
            command,
            encgan_version: env!("CARGO_PKG_VERSION"),
            checkpoint_format: FORMAT_VERSION,
            seed,
            config_hash: sha256_hex(canonical.as_bytes()),
            config,
            label: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }
}

pub struct OutDir {
    dir: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    /// Registers a file written by other means.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn finish(self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        let path = self.path(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
