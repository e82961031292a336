use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{content_hash, RunConfig};
use crate::error::{Error, Result};

/// Completion marker listing every file a stage produced.
pub const FILES_MANIFEST: &str = "files.json";
pub const CONFIG_SNAPSHOT: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub run_id: String,
    pub files: Vec<ProducedFile>,
}

/// A content-addressed run directory `<root>/<kind>-<hash>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub kind: String,
    pub id: String,
    pub dir: PathBuf,
}

impl Stage {
    pub fn new<K: Serialize>(root: &Path, kind: &str, key: &K) -> Self {
        let id = content_hash(key);
        Self {
            kind: kind.to_string(),
            dir: root.join(format!("{kind}-{id}")),
            id,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn is_complete(&self) -> bool {
        self.path(FILES_MANIFEST).is_file()
    }

    /// Creates the directory and stores the config snapshot.
    pub fn begin(&self, cfg: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let _ = std::fs::remove_file(self.path(FILES_MANIFEST));
        let p = self.path(CONFIG_SNAPSHOT);
        std::fs::write(&p, cfg.to_json()).map_err(|e| Error::io(&p, e))
    }

    /// Hashes the produced files and writes the completion marker.
    pub fn finish(&self, files: &[&str]) -> Result<StageManifest> {
        let mut produced = Vec::with_capacity(files.len() + 1);
        for name in std::iter::once(&CONFIG_SNAPSHOT).chain(files) {
            let p = self.path(name);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            produced.push(ProducedFile {
                path: name.to_string(),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
        let m = StageManifest {
            stage: self.kind.clone(),
            run_id: self.id.clone(),
            files: produced,
        };
        let p = self.path(FILES_MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&p, e))?;
        Ok(m)
    }

    /// Path of an upstream artifact, or an error saying which command makes it.
    pub fn require(&self, name: &str, command: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !self.is_complete() || !p.exists() {
            return Err(Error::Other(format!(
                "missing {} (expected in {}); run `tinydistill {command}` with the same configuration first",
                name,
                self.dir.display()
            )));
        }
        Ok(p)
    }
}

pub fn read_stage_manifest(dir: &Path) -> Result<StageManifest> {
    let p = dir.join(FILES_MANIFEST);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}
