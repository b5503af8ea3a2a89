//! Run manifests and hashed output writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub seconds: f64,
}

/// A budget reduction applied to keep a batch under the runtime cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub method: String,
    pub field_index: usize,
    pub parameter: String,
    pub from: usize,
    pub to: usize,
    pub predicted_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub timings: Vec<MethodTiming>,
    pub reductions: Vec<Reduction>,
    pub failures: Vec<MethodFailure>,
    pub audits: BTreeMap<String, serde_json::Value>,
    pub notes: Vec<String>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("rainfield-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("parallel".into(), cfg!(feature = "parallel").to_string());
        let mut seeds = BTreeMap::new();
        seeds.insert("master".into(), config.seed);
        Self {
            command: command.into(),
            config: config.clone(),
            seeds,
            versions,
            timings: Vec::new(),
            reductions: Vec::new(),
            failures: Vec::new(),
            audits: BTreeMap::new(),
            notes: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}_manifest.json")
    }

    pub fn load(dir: &Path, command: &str) -> Result<Self> {
        let path = dir.join(Self::file_name(command));
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Path → hash map of the listed outputs.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under a run directory and records each in the manifest.
pub struct RunWriter {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl RunWriter {
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.files.retain(|f| f.path != rel);
        self.manifest.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes the manifest itself (not listed in its own inventory).
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        let rel = RunManifest::file_name(&self.manifest.command);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.root.join(rel);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writer_records_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RunWriter::create(dir.path(), RunManifest::new("simulate", &ExperimentConfig::default())).unwrap();
        w.write("a/b.txt", b"hello").unwrap();
        w.write("c.txt", b"").unwrap();
        w.write("a/b.txt", b"hello").unwrap();
        let m = w.finish().unwrap();
        assert_eq!(m.files.len(), 2);
        assert_eq!(m.files[0].sha256, sha256_hex(b"hello"));
        let back = RunManifest::load(dir.path(), "simulate").unwrap();
        assert_eq!(back, m);
    }
}
