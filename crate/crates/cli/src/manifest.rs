//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("bwflow".to_string(), bwflow::VERSION.to_string()),
        (
            "bwflow-cli".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
    ])
}

/// Hashes the listed files; unreadable files are recorded as such.
pub fn hash_all(paths: &[PathBuf]) -> BTreeMap<String, String> {
    paths
        .iter()
        .map(|p| {
            let h = hash_file(p).unwrap_or_else(|e| format!("unreadable: {e}"));
            (p.display().to_string(), h)
        })
        .collect()
}

/// `out.bwf` gets `out.bwf.manifest.json`; a directory gets `manifest.json` inside it.
pub fn default_manifest_path(primary: &Path) -> PathBuf {
    if primary.is_dir() {
        return primary.join("manifest.json");
    }
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
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

    #[test]
    fn manifest_paths() {
        assert_eq!(
            default_manifest_path(Path::new("x/out.bwf")),
            PathBuf::from("x/out.bwf.manifest.json")
        );
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            default_manifest_path(dir.path()),
            dir.path().join("manifest.json")
        );
    }
}
