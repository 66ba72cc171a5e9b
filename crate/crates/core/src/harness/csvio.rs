//! CSV emission and run manifests.
//!
//! Floats are written with `Display` (shortest round-trip form), so a rerun
//! with the same config and seeds produces byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Write one CSV file: header row first, then the data rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::InvalidParameter(format!(
                "csv row {i} has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// 64-bit FNV-1a over a byte string; used to fingerprint configs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Provenance record written next to every experiment's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    /// FNV-1a of the canonicalized config text.
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the output directory, in emission order.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn begin(config_text: &str, seeds: Vec<u64>) -> RunManifest {
        RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            config_hash: format!("{:016x}", fnv1a64(config_text.as_bytes())),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            started_unix: now_unix(),
            finished_unix: 0,
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, relative_path: impl Into<String>) {
        self.artifacts.push(relative_path.into());
    }

    /// Stamp the end time and write `manifest.json` into `dir` (the manifest
    /// itself is not listed as an artifact).
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = now_unix();
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::InvalidParameter(format!("manifest encode: {e}")))?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
