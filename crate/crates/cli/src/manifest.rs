use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub status: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash each file, keyed by file name.
pub fn hash_files(paths: &[PathBuf]) -> BTreeMap<String, String> {
    paths
        .iter()
        .filter_map(|p| {
            let name = p.file_name()?.to_string_lossy().into_owned();
            Some((name, sha256_file(p).ok()?))
        })
        .collect()
}

pub fn append(out_dir: &Path, entry: &ManifestEntry) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(out_dir.join(MANIFEST_FILE))?;
    let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
    writeln!(f, "{line}")
}

pub fn read(out_dir: &Path) -> std::io::Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(out_dir.join(MANIFEST_FILE))?;
    text.lines().map(|l| serde_json::from_str(l).map_err(std::io::Error::other)).collect()
}
