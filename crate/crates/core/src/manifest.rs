//! Run manifests: the list of files a command produced, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scenario::{resolve, Resolved, ScenarioConfig};
use crate::sim::run_partial;
use crate::trace::{write_atomic, SimTrace};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LEDGER_FILE: &str = "ledger.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn build(command: &str, config_path: Option<&Path>, out_dir: &Path, files: &[PathBuf]) -> Result<Self> {
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let bytes = fs::read(f)?;
            let rel = f.strip_prefix(out_dir).unwrap_or(f);
            artifacts.push(Artifact {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Ok(RunManifest {
            command: command.into(),
            config_path: config_path.map(|p| p.to_string_lossy().into_owned()),
            output_dir: out_dir.to_string_lossy().into_owned(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp,
            artifacts,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Artifacts in `dir` whose content differs from the recorded hash.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| {
                fs::read(dir.join(&a.path))
                    .map(|b| sha256_hex(&b) != a.sha256)
                    .unwrap_or(true)
            })
            .map(|a| a.path.clone())
            .collect()
    }
}

/// Writes the resolved config, the ledger and the trace files of one run.
pub fn write_run_outputs(dir: &Path, resolved: &Resolved, trace: &SimTrace) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let path = dir.join(CONFIG_FILE);
    write_atomic(&path, resolved.config.to_json().as_bytes())?;
    files.push(path);
    let path = dir.join(LEDGER_FILE);
    write_atomic(&path, serde_json::to_string_pretty(&resolved.ledger)?.as_bytes())?;
    files.push(path);
    files.extend(trace.write_dir(dir)?);
    Ok(files)
}

/// Reruns the configuration saved next to a manifest into `out_dir`.
/// Returns the new manifest and the run's numerical failure, if any.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> Result<(RunManifest, Option<Error>)> {
    let src_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let config_path = src_dir.join(CONFIG_FILE);
    let config = ScenarioConfig::load(&config_path)?;
    let resolved = resolve(&config)?;
    let (trace, failure) = run_partial(&resolved);
    let files = write_run_outputs(out_dir, &resolved, &trace)?;
    let manifest = RunManifest::build("simulate", Some(&config_path), out_dir, &files)?;
    manifest.write(out_dir)?;
    Ok((manifest, failure))
}
