//! Per-stage provenance manifests: SHA-256 of every input file (directories
//! are walked in sorted order) plus the hash of the effective configuration.

use lidarpose::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Input path -> SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Every regular file under `root`, sorted by path.
fn walk_sorted(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            walk_sorted(&entry, out)?;
        } else {
            out.push(entry);
        }
    }
    Ok(())
}

pub fn build_manifest(
    stage: &str,
    seed: u64,
    config_json: &str,
    inputs: &[&Path],
) -> Result<StageManifest> {
    let mut hashed = BTreeMap::new();
    for input in inputs {
        if input.is_dir() {
            let mut files = Vec::new();
            walk_sorted(input, &mut files)?;
            for f in files {
                hashed.insert(f.display().to_string(), sha256_file(&f)?);
            }
        } else {
            hashed.insert(input.display().to_string(), sha256_file(input)?);
        }
    }
    Ok(StageManifest {
        stage: stage.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        inputs: hashed,
    })
}

/// Manifest path for a stage output: `manifest.json` inside directories,
/// `<name>.manifest.json` next to files.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        output.with_file_name(format!("{name}.manifest.json"))
    }
}

pub fn write_manifest(output: &Path, manifest: &StageManifest) -> Result<()> {
    lidarpose::simulator::write_json(&manifest_path(output), manifest)
}
