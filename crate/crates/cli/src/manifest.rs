//! Atomic output writing and the run manifest stored next to every output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use redp_core::bundle::{self, sha256_hex};
use serde::Serialize;
use serde_json::Value;

use crate::Failure;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: &'static str,
    pub command: String,
    pub command_line: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub bundle_version: &'static str,
    pub bundle_manifest_sha256: String,
    pub outputs: Vec<FileDigest>,
    pub formats: BTreeMap<&'static str, u32>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Failure::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(path, e))?;
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

pub fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

/// Collects inputs and outputs of one command, then writes its manifest.
pub struct Run {
    command: String,
    started: Instant,
    started_unix: u64,
    pub config: Value,
    pub seeds: Vec<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub formats: BTreeMap<&'static str, u32>,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config: Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            formats: BTreeMap::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<String, Failure> {
        let text = read_input(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    pub fn write(&mut self, path: &Path, text: &str) -> Result<(), Failure> {
        write_atomic(path, text.as_bytes())?;
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }

    pub fn finish(self, manifest_path: &Path) -> Result<(), Failure> {
        let m = RunManifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            command_line: std::env::args().collect(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            bundle_version: bundle::BUNDLE_VERSION,
            bundle_manifest_sha256: sha256_hex(bundle::MANIFEST.as_bytes()),
            outputs: self.outputs,
            formats: self.formats,
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n";
        write_atomic(manifest_path, text.as_bytes())
    }
}
