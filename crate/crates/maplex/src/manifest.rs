//! Run manifests for reproducibility.
//!
//! Every CLI invocation that writes files also writes exactly one
//! manifest next to them: the subcommand, the tool version, the full
//! flag/config snapshot, SHA-256 digests of every input file, and the
//! output paths. Together with the explicit seed this is enough to re-run
//! the command and reproduce its outputs byte for byte. Manifests contain
//! no timestamps, so reruns produce identical manifests too.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Snapshot of every flag and config value the run used.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input file and its digest. Inputs stay sorted by path.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        self.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Validation(format!("cannot serialize manifest: {e}")))?;
        crate::dataset::write_atomic(path.as_ref(), format!("{json}\n").as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path.as_ref())?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn manifest_round_trip_and_digest() {
        let dir = tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "a,b\n1,2\n").unwrap();

        let mut m = RunManifest::new("synth", Some(7), serde_json::json!({"n": 3}));
        m.add_input(&input).unwrap();
        m.add_output(dir.path().join("out.csv"));

        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded.command, "synth");
        assert_eq!(loaded.seed, Some(7));
        assert_eq!(loaded.inputs.len(), 1);
        assert_eq!(loaded.inputs[0].sha256.len(), 64);

        // deterministic bytes on re-save
        let again = dir.path().join("manifest2.json");
        loaded.save(&again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }
}
