use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{load_image, ImageTensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One image in a manifest. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: PathBuf,
    pub split: Split,
    #[serde(default)]
    pub label: Option<i64>,
    #[serde(default)]
    pub mask_path: Option<PathBuf>,
    #[serde(default)]
    pub organ: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            root: root.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> Manifest {
        self.filter(|r| r.split == split)
    }

    pub fn filter(&self, keep: impl Fn(&SampleRecord) -> bool) -> Manifest {
        Manifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    /// Keeps the records whose ids are listed, in manifest order.
    pub fn select_ids(&self, ids: &[String]) -> Manifest {
        let set: HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.filter(|r| set.contains(r.id.as_str()))
    }

    /// Loads every image at `size`, in manifest order.
    pub fn load_images(&self, size: (usize, usize)) -> Result<Vec<(String, ImageTensor)>> {
        self.records
            .iter()
            .map(|r| Ok((r.id.clone(), load_image(&self.resolve(&r.path), size)?)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for r in &self.records {
            let mut r = r.clone();
            // Rewrite paths so they stay valid from the new location.
            r.path = relocate(&self.root, &base, &r.path);
            r.mask_path = r.mask_path.map(|m| relocate(&self.root, &base, &m));
            writeln!(f, "{}", serde_json::to_string(&r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn relocate(old_root: &Path, new_root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    let abs = old_root.join(p);
    if old_root == new_root {
        return p.to_path_buf();
    }
    match (abs.canonicalize(), new_root.canonicalize()) {
        (Ok(a), Ok(n)) => a.strip_prefix(&n).map(Path::to_path_buf).unwrap_or(a),
        _ => abs,
    }
}

/// Reads a JSON Lines manifest. Blank lines are ignored.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.into(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok(Manifest {
        records,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}
