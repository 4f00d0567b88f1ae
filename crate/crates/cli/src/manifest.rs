//! Run manifests written next to every output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{write_json, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceDiagnostic {
    pub design: String,
    pub threshold: f64,
    pub acceptance_rate: f64,
    pub mean_draws: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ClippingCounters {
    pub v_clipped: usize,
    pub r2_clipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
    pub wall_time_secs: f64,
    pub acceptance: Vec<AcceptanceDiagnostic>,
    pub clipping: ClippingCounters,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub struct ManifestBuilder {
    start: Instant,
    command: &'static str,
    config_hash: String,
    pub seed: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl ManifestBuilder {
    pub fn new(command: &'static str, config_text: &str, seed: u64) -> Self {
        Self { start: Instant::now(), command, config_hash: sha256_hex(config_text.as_bytes()), seed }
    }

    pub fn finish(
        self,
        path: &Path,
        outputs: &[PathBuf],
        acceptance: Vec<AcceptanceDiagnostic>,
        clipping: ClippingCounters,
        details: serde_json::Value,
    ) -> CliResult<()> {
        let m = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: self.command.to_string(),
            config_hash: self.config_hash,
            master_seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: self.start.elapsed().as_secs_f64(),
            acceptance,
            clipping,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            details,
        };
        write_json(path, &m)
    }
}

/// `dir/name.csv` becomes `dir/name.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.{suffix}"))
}
