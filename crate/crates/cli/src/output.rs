//! Output directory with checksummed files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub config: serde_json::Value,
    pub started: String,
    pub finished: String,
    pub status: String,
    pub outputs: Vec<ManifestEntry>,
}

/// Every file of a run goes through this writer, which records its checksum.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
    started: DateTime<Utc>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Outputs {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new(), started: Utc::now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    /// CSV with a fixed header row. Floats use the shortest representation
    /// that reads back exactly.
    pub fn write_csv<R>(&mut self, rel: &str, header: &[&str], rows: R) -> Result<PathBuf, CliError>
    where
        R: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(CliError::Internal(format!("{rel}: row has {} fields, header {}", row.len(), header.len())));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        self.write(rel, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Writes `manifest.json` (not itself listed) and returns it.
    pub fn finish<C: Serialize>(
        self,
        command: &str,
        seed: Option<u64>,
        workers: usize,
        config: &C,
        status: &str,
    ) -> Result<RunManifest, CliError> {
        let mut outputs = self.entries;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            workers,
            config: serde_json::to_value(config).map_err(|e| CliError::Internal(e.to_string()))?,
            started: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            status: status.to_string(),
            outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Internal(format!("csv: {e}"))
}

pub fn f(v: f64) -> String {
    format!("{v:?}")
}
