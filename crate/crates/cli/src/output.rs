use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationSummary {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub safety_factor: f64,
}

/// Provenance record written next to each command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub manifest_hash: String,
    pub tool_version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    pub config_hash: String,
    pub model_hash: String,
    pub calibration: Option<CalibrationSummary>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputFile>,
}

#[derive(Serialize)]
struct ManifestKey<'a> {
    tool_version: &'a str,
    command: &'a str,
    arguments: &'a [String],
    config_hash: &'a str,
    model_hash: &'a str,
}

/// Writes files atomically into one directory and records them for the
/// manifest.
pub struct Output {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Output {
    pub fn new(dir: &Path, command: &str, arguments: Vec<String>, config_hash: String, model_hash: String) -> Self {
        let tool_version = env!("CARGO_PKG_VERSION");
        let manifest_hash = hash_json(&ManifestKey {
            tool_version,
            command,
            arguments: &arguments,
            config_hash: &config_hash,
            model_hash: &model_hash,
        });
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                manifest_hash,
                tool_version,
                command: command.to_string(),
                arguments,
                config_hash,
                model_hash,
                calibration: None,
                started_unix: unix_now(),
                finished_unix: 0.0,
                outputs: Vec::new(),
            },
        }
    }

    pub fn manifest_hash(&self) -> &str {
        &self.manifest.manifest_hash
    }

    pub fn model_hash(&self) -> &str {
        &self.manifest.model_hash
    }

    pub fn set_calibration(&mut self, c0: f64, safety_factor: f64) {
        self.manifest.calibration = Some(CalibrationSummary { c0, safety_factor });
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("writing {name}: {e}"));
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        let mut tmp = NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        let path = self.dir.join(name);
        tmp.persist(&path).map_err(|e| io(e.error))?;
        self.manifest.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<PathBuf, CliError> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for row in rows {
            writer.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `<command>.manifest.json`; call last.
    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.finished_unix = unix_now();
        let name = format!("{}.manifest.json", self.manifest.command);
        let manifest = self.manifest.clone();
        self.write_json(&name, &manifest)
    }
}
