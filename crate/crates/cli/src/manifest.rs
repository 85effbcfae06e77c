//! Run manifests.

use crate::commands::RunOptions;
use crate::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the resolved config in TOML form.
    pub config_sha256: String,
    pub seed: u64,
    pub paper_scale: bool,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn config_hash(toml_text: &str) -> String {
    sha256_hex(toml_text.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, toml_text: &str, opts: &RunOptions, files: Vec<&str>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: config_hash(toml_text),
            seed: cfg.seed,
            paper_scale: opts.paper_scale,
            files: files.into_iter().map(str::to_owned).collect(),
            config: cfg.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
