//! Run manifests written beside every report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub key: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Files hash by content; a directory hashes the sorted list of
/// `name digest` lines of the regular files directly inside it.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut entries: Vec<_> = fs::read_dir(path)
        .with_context(|| format!("cannot list {}", path.display()))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut h = Sha256::new();
    for e in entries {
        if e.file_type()?.is_file() {
            let line = format!(
                "{} {}\n",
                e.file_name().to_string_lossy(),
                sha256_file(&e.path())?
            );
            h.update(line.as_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("{} is not a run manifest", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    /// Inputs whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Result<Vec<String>> {
        let mut changed = vec![];
        for d in &self.inputs {
            let now = sha256_path(Path::new(&d.path)).ok();
            if now.as_deref() != Some(d.sha256.as_str()) {
                changed.push(d.path.clone());
            }
        }
        Ok(changed)
    }
}
