//! Run manifests and JSON config files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: pass the file back with `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub dataset_hash: Option<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

/// Reads a command config from a plain config file or from a manifest of the same command.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let config = match value.as_object() {
        Some(obj) if obj.contains_key("command") && obj.contains_key("config") => {
            let found = obj["command"].as_str().unwrap_or_default();
            if found != command {
                return Err(CliError::Usage(format!("manifest is for `{found}`, not `{command}`")));
            }
            obj["config"].clone()
        }
        _ => value,
    };
    serde_json::from_value(config).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    seeds: BTreeMap<String, u64>,
    dataset_hash: Option<String>,
    started: Instant,
) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_owned(),
        config: serde_json::to_value(config)?,
        seeds,
        dataset_hash,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}
