use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, LoadedConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    /// `None` when the built-in 4-bus case was used.
    pub path: Option<String>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Command line without the program name and without `--out-dir`.
    pub args: Vec<String>,
    pub config: ConfigRecord,
    pub options: serde_json::Value,
    pub seed: Option<u64>,
    pub outputs: Vec<OutputRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// Strips `--out-dir` so the recorded command is location independent.
pub fn replayable_args(raw: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in raw.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if s == "--out-dir" {
            skip = true;
            continue;
        }
        if s.starts_with("--out-dir=") {
            continue;
        }
        out.push(s);
    }
    out
}

/// Writes command outputs under one directory and records their hashes.
pub struct OutputSet {
    dir: PathBuf,
    records: Vec<OutputRecord>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::usage(format!("{}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        self.records.push(OutputRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        raw_args: &[OsString],
        config: &LoadedConfig,
        options: serde_json::Value,
        seed: Option<u64>,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "gridsafe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: replayable_args(raw_args),
            config: ConfigRecord {
                path: config.path.as_ref().map(|p| p.display().to_string()),
                sha256: config.sha256.clone(),
            },
            options,
            seed,
            outputs: self.records,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
