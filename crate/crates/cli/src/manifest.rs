//! Per-run manifest written next to every set of outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub toolkit: String,
    pub version: String,
    pub config: Value,
    pub seeds: Value,
    pub workers: Option<usize>,
    pub ebn0_convention: String,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects the files of one run and writes them, then the manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<FileDigest>,
    started_at: String,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
            started_at: now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, relative: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(FileDigest {
            path: relative.to_string(),
            sha256: sha256_hex(contents),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    pub fn finish(
        mut self,
        subcommand: &str,
        config: Value,
        seeds: Value,
        workers: Option<usize>,
        inputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let inputs = inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>, _>>()?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            toolkit: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            workers,
            ebn0_convention: scma_pn::pnmetrics::EBN0_CONVENTION.to_string(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            inputs,
            outputs: std::mem::take(&mut self.written),
        };
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(())
    }
}
