//! Run provenance: which configuration produced which output files.

use serde::{Deserialize, Serialize};
use sha2::Digest;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

impl ManifestEntry {
    pub fn new(name: &str, content: &[u8]) -> ManifestEntry {
        let mut hasher = sha2::Sha256::new();
        hasher.update(content);
        let digest = hasher.finalize();
        ManifestEntry {
            name: name.to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: content.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the configuration document, byte for byte.
    pub config_sha256: String,
    pub artifact_version: String,
    pub wall_seconds: f64,
    pub command: String,
    pub outputs: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(
        config_sha256: &str,
        wall_seconds: f64,
        command: String,
        outputs: Vec<ManifestEntry>,
    ) -> RunManifest {
        RunManifest {
            config_sha256: config_sha256.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_seconds,
            command,
            outputs,
        }
    }
}
