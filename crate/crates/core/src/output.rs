//! Deterministic artifact writing: fixed float formatting, CSV tables, manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

impl OutputError {
    pub fn new(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OutputError { path: path.into(), source }
    }
}

/// 17 significant digits in scientific notation; −0 prints as 0.
pub fn fmt_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

pub fn csv_table(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| OutputError::new(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| OutputError::new(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Records artifacts written under one root directory.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, OutputError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| OutputError::new(&root, e))?;
        Ok(ArtifactWriter { root, entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<PathBuf, OutputError> {
        let path = self.root.join(rel);
        write_file(&path, contents)?;
        self.entries.push(ArtifactEntry { path: rel.to_string(), bytes: contents.len() as u64, sha256: sha256_hex(contents) });
        Ok(path)
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing every artifact so far (sorted by path).
    pub fn finish(mut self, command: &str, config_sha256: &str, parameters: BTreeMap<String, serde_json::Value>) -> Result<Manifest, OutputError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            config_sha256: config_sha256.to_string(),
            parameters,
            artifacts: self.entries,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_file(&self.root.join("manifest.json"), text.as_bytes())?;
        Ok(manifest)
    }
}

pub const MANIFEST_SCHEMA: &str = "roughfilm-manifest/1";

/// Deterministic run description; volatile data (timings, host) goes to `run_info.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub config_sha256: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_is_fixed_width_and_round_trips() {
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
        for x in [1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_shape() {
        let t = csv_table("a,b", vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.starts_with("a,b\n1.0000000000000000e0,"));
    }

    #[test]
    fn manifest_sorted_and_hashed() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::new(dir.path()).unwrap();
        w.write("b.csv", b"x").unwrap();
        w.write("sub/a.csv", b"y").unwrap();
        let m = w.finish("test", "00", BTreeMap::new()).unwrap();
        assert_eq!(m.artifacts[0].path, "b.csv");
        assert_eq!(m.artifacts[1].sha256, sha256_hex(b"y"));
        assert!(dir.path().join("manifest.json").exists());
    }
}
