//! On-disk workspace: designs, datasets, checkpoints and reports under one
//! root, indexed by a manifest of content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const WORKSPACE_ENV: &str = "MORPHSIM_WORKSPACE";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KINDS: [&str; 4] = ["designs", "datasets", "checkpoints", "reports"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub bytes: u64,
}

/// Relative artifact path → content hash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Artifact ids are short names of letters, digits, `-` and `_`.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Workspace {
    /// `explicit` if given, else the environment override, else `./workspace`.
    pub fn locate(explicit: Option<&Path>) -> Workspace {
        let root = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("workspace"));
        Workspace { root }
    }

    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Workspace> {
        let ws = Workspace { root: root.into() };
        for kind in KINDS {
            std::fs::create_dir_all(ws.root.join(kind))?;
        }
        Ok(ws)
    }

    pub fn path(&self, kind: &str, id: &str, extension: &str) -> Option<PathBuf> {
        (KINDS.contains(&kind) && valid_id(id)).then(|| self.root.join(kind).join(format!("{id}.{extension}")))
    }

    pub fn manifest(&self) -> std::io::Result<Manifest> {
        match std::fs::read(self.root.join(MANIFEST_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(std::io::Error::other),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(e),
        }
    }

    /// Writes an artifact and records its hash. Callers serialize writes.
    pub fn store(&self, kind: &str, id: &str, extension: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self
            .path(kind, id, extension)
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("invalid artifact id {id:?}")))?;
        std::fs::create_dir_all(path.parent().expect("artifact has a parent"))?;
        write_atomic(&path, bytes)?;
        let mut manifest = self.manifest()?;
        manifest.artifacts.insert(
            format!("{kind}/{id}.{extension}"),
            ManifestEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        let text = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join(MANIFEST_FILE), &text)?;
        Ok(path)
    }

    pub fn load(&self, kind: &str, id: &str, extension: &str) -> std::io::Result<Option<Vec<u8>>> {
        let Some(path) = self.path(kind, id, extension) else {
            return Ok(None);
        };
        match std::fs::read(path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Manifest entries whose file is missing or no longer matches its hash.
    pub fn verify(&self) -> std::io::Result<Vec<String>> {
        let mut stale = Vec::new();
        for (rel, entry) in self.manifest()?.artifacts {
            match std::fs::read(self.root.join(&rel)) {
                Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
                _ => stale.push(rel),
            }
        }
        Ok(stale)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_artifacts_verify_until_modified() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        ws.store("designs", "a", "json", b"{}").unwrap();
        ws.store("designs", "b", "json", b"[]").unwrap();
        assert!(ws.verify().unwrap().is_empty());
        assert_eq!(ws.load("designs", "a", "json").unwrap().unwrap(), b"{}");
        assert_eq!(ws.load("designs", "zz", "json").unwrap(), None);
        std::fs::write(dir.path().join("designs/b.json"), b"[1]").unwrap();
        assert_eq!(ws.verify().unwrap(), vec!["designs/b.json".to_string()]);
    }

    #[test]
    fn ids_cannot_escape_the_root() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert!(ws.path("designs", "../x", "json").is_none());
        assert!(ws.path("secrets", "x", "json").is_none());
        assert!(ws.store("designs", "", "json", b"").is_err());
    }
}
