use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Failure;

/// Record written next to every command's outputs. `config` holds the fully
/// resolved arguments, so the command can be re-run from the manifest alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// Path to SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// Path to SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
    pub threads: usize,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn digests(paths: &[&Path]) -> Result<BTreeMap<String, String>, Failure> {
    paths.iter().map(|p| Ok((p.display().to_string(), file_digest(p)?))).collect()
}

/// `<out>.manifest.json` next to an output file.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(path, text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}
