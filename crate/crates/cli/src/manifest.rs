//! Run manifests: what was run, when, and a checksum for every output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::LabError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Scalar run parameters used to align runs in comparisons.
    pub parameters: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
    /// Directory the manifest was loaded from or written to.
    #[serde(skip)]
    pub run_dir: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), LabError> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Every regular file below `dir` except the manifest, sorted by path.
pub fn inventory(dir: &Path) -> Result<Vec<FileEntry>, LabError> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<(), LabError> {
    for entry in fs::read_dir(dir).map_err(|e| LabError::io(dir, e))? {
        let path = entry.map_err(|e| LabError::io(dir, e))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("below root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let rel = rel.join("/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let (sha256, bytes) = sha256_file(&path)?;
        out.push(FileEntry { path: rel, sha256, bytes });
    }
    Ok(())
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| LabError::MissingData(format!("{}: not a run manifest ({e})", path.display())))?;
        m.run_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf, LabError> {
        let path = self.run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
        Ok(path)
    }

    pub fn file(&self, rel: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == rel)
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    /// Checks that every listed file exists with its recorded checksum.
    pub fn verify(&self) -> Result<(), LabError> {
        for f in &self.files {
            let path = self.path_of(&f.path);
            if !path.is_file() {
                return Err(LabError::MissingData(format!("{} listed in the manifest but absent", f.path)));
            }
            let (sha, _) = sha256_file(&path)?;
            if sha != f.sha256 {
                return Err(LabError::MissingData(format!("{} changed since the run (checksum mismatch)", f.path)));
            }
        }
        Ok(())
    }

    /// Re-reads the run directory into the file inventory.
    pub fn refresh_inventory(&mut self) -> Result<(), LabError> {
        self.files = inventory(&self.run_dir)?;
        Ok(())
    }
}
