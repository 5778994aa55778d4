//! Per-run JSON manifests: inputs, effective configuration, seed and the
//! hashes of everything written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::{sha256_file, write_atomic};

pub const TOOL: &str = "loopscope";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<FileEntry>,
    pub config: serde_json::Value,
    pub outputs: Vec<FileEntry>,
    pub notes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: impl Serialize) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            inputs: Vec::new(),
            config: serde_json::to_value(config).expect("serialisable config"),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    fn entry(role: &str, path: &Path) -> Result<FileEntry> {
        Ok(FileEntry { role: role.into(), path: path.display().to_string(), sha256: sha256_file(path)? })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(Self::entry(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.push(Self::entry(role, path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.into(), value.to_string());
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest.{command}.json")
    }

    /// Write `manifest.<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.command));
        let mut text = serde_json::to_string_pretty(self).expect("serialisable manifest");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
