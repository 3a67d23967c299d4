//! Output directories with deterministic file names and a manifest listing
//! every written file with its content hash.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampling::EmpiricalField;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `git describe --always --dirty` of the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub git_describe: String,
    pub seed: u64,
    pub config: std::collections::BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
    /// Command-specific metadata.
    pub extra: serde_json::Value,
}

/// A directory receiving a run's files.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
    }

    /// Write a CSV from a header and rows of already-formatted cells.
    pub fn write_csv<S: AsRef<str>>(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<S>],
    ) -> Result<PathBuf> {
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(Error::invalid(format!(
                "{name}: row of {} cells under {} columns",
                r.len(),
                header.len()
            )));
        }
        let path = self.path(name);
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r.iter().map(|c| c.as_ref()))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    pub fn write_field(&mut self, name: &str, field: &EmpiricalField) -> Result<PathBuf> {
        let path = self.path(name);
        field.write_csv(&path)?;
        self.record(name);
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.record(name);
        Ok(path)
    }

    /// Hash every written file and write `manifest.json`.
    pub fn finish(
        self,
        command: &str,
        config_text: &str,
        config: std::collections::BTreeMap<String, String>,
        seed: u64,
        extra: serde_json::Value,
    ) -> Result<Manifest> {
        let mut names = self.written.clone();
        names.sort();
        let files = names
            .iter()
            .map(|n| {
                let p = self.path(n);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(FileEntry {
                    name: n.clone(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            git_describe: git_describe(),
            seed,
            config,
            files,
            extra,
        };
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
