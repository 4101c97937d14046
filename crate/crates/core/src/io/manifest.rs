use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{config_hash, sha256_file, write_atomic, FORMAT_VERSION, TOOL_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// What a run was given and what it wrote, with content hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub tool_version: String,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl RunManifest {
    pub fn new(master_seed: u64, config: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            master_seed,
            config_hash: config_hash(&config),
            config,
            tool_version: TOOL_VERSION.into(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Hash `dir/rel` and record it under `name`.
    pub fn record(&mut self, dir: &Path, name: &str, rel: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(rel))?;
        self.artifacts.insert(
            name.into(),
            ArtifactEntry {
                path: rel.into(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(&dir.join(MANIFEST_NAME), s.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_NAME))?)
            .map_err(|e| Error::Malformed(format!("manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: m.format_version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(m)
    }

    /// Fails on the first artifact that is missing or whose bytes changed.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for entry in self.artifacts.values() {
            let p = dir.join(&entry.path);
            if !p.exists() || sha256_file(&p)? != entry.sha256 {
                return Err(Error::HashMismatch(p));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_any_changed_byte() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        std::fs::write(dir.path().join("b.txt"), b"world").unwrap();
        let mut m = RunManifest::new(3, serde_json::json!({"k": 1}));
        m.record(dir.path(), "a", "a.txt").unwrap();
        m.record(dir.path(), "b", "b.txt").unwrap();
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("b.txt"), b"worle").unwrap();
        assert!(matches!(back.verify(dir.path()), Err(Error::HashMismatch(_))));
        std::fs::write(dir.path().join("b.txt"), b"world").unwrap();
        back.verify(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(back.verify(dir.path()).is_err());
    }

    #[test]
    fn config_hash_is_stable() {
        let a = RunManifest::new(0, serde_json::json!({"x": [1, 2], "y": "z"}));
        let b = RunManifest::new(9, serde_json::json!({"y": "z", "x": [1, 2]}));
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
