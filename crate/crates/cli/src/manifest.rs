//! Run manifests: every artifact-producing run writes `run-manifest.json`
//! holding the subcommand, the fully resolved configuration (everything
//! except the output directory), and a SHA-256 of each input file the run
//! reads. Re-running with `--manifest` verifies those hashes and then
//! executes the stored configuration, reproducing the artifacts bit for
//! bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::errors::{io_err, CliError};

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved configuration; the output directory is deliberately not
    /// part of it, so a replay can write anywhere.
    pub config: serde_json::Value,
    /// Input path -> SHA-256 of its bytes, for every file the run reads.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        subcommand: &str,
        config: &C,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)
            .map_err(|e| CliError::Config(format!("cannot encode configuration: {e}")))?;
        let mut hashed = BTreeMap::new();
        for path in inputs {
            hashed.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(RunManifest { subcommand: subcommand.into(), config, inputs: hashed })
    }

    /// Decode the stored configuration for a replay.
    pub fn config_as<C: DeserializeOwned>(&self, subcommand: &str) -> Result<C, CliError> {
        if self.subcommand != subcommand {
            return Err(CliError::Config(format!(
                "manifest records a `{}` run, not `{subcommand}`",
                self.subcommand
            )));
        }
        serde_json::from_value(self.config.clone())
            .map_err(|e| CliError::Config(format!("manifest configuration is malformed: {e}")))
    }

    /// Re-hash every recorded input; a changed or missing file makes the
    /// replay meaningless, so it is rejected rather than silently rerun.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for (path, expected) in &self.inputs {
            let actual = sha256_file(Path::new(path))?;
            if &actual != expected {
                return Err(CliError::Data(format!(
                    "input {path} changed since the manifest was written \
                     (recorded sha256 {expected}, found {actual})"
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        write_pretty_json(&out_dir.join(MANIFEST_FILE), self)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Pretty JSON with a trailing newline; the fixed serializer plus
/// shortest-round-trip float formatting keeps repeated runs byte-identical.
pub fn write_pretty_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("{}: cannot encode JSON: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Fail fast (as a configuration error) when a flag references a missing
/// path; content-level problems surface later as data errors.
pub fn require_exists(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("{what} path does not exist: {}", path.display())));
    }
    Ok(path.to_path_buf())
}
