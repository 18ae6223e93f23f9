//! Each command writes exactly one manifest into its output directory,
//! recording the invocation, input hashes, seeds and artifact version
//! needed to rerun it.

use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full argv of the invocation.
    pub command: Vec<String>,
    /// SHA-256 of the effective config: the config file's bytes when one was
    /// given, the serialized defaults otherwise, empty for commands whose
    /// whole configuration is the argv.
    pub config_hash: String,
    /// SHA-256 of the scenario file; empty for commands without one.
    pub scenario_hash: String,
    pub seeds: Vec<u64>,
    pub artifact_version: String,
    pub created_unix_secs: u64,
}

impl RunManifest {
    pub fn new(config_hash: String, scenario_hash: String, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: std::env::args().collect(),
            config_hash,
            scenario_hash,
            seeds,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> io::Result<()> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), body + "\n")
}
