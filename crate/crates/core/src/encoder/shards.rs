//! Feature shards: `TUSF` binary matrices with a JSON Lines id sidecar.
//!
//! Binary layout (little-endian): magic `TUSF`, `u32` version = 1, `u32`
//! count, `u32` dim, then `count × dim` `f32` values row-major. The sidecar
//! (`<shard>.ids.jsonl`) maps each row to its sample id; samples that could
//! not be embedded are listed with `"row": null` and the failure reason.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"TUSF";
pub const SHARD_VERSION: u32 = 1;

/// Embedded features of a manifest, rows in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub features: Array2<f64>,
    /// Samples that could not be embedded: `(id, reason)`.
    pub failed: Vec<(String, String)>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarLine {
    row: Option<usize>,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn sidecar_path(shard: &Path) -> PathBuf {
    let mut s = shard.as_os_str().to_owned();
    s.push(".ids.jsonl");
    PathBuf::from(s)
}

pub fn write_shard(set: &FeatureSet, path: &Path) -> Result<()> {
    if set.ids.len() != set.features.nrows() {
        return Err(Error::Shape(format!(
            "{} ids for {} feature rows",
            set.ids.len(),
            set.features.nrows()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::with_capacity(16 + set.features.len() * 4);
    buf.extend_from_slice(SHARD_MAGIC);
    buf.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.features.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(set.features.ncols() as u32).to_le_bytes());
    for v in set.features.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let mut f = fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
    let mut lines = String::new();
    for (row, id) in set.ids.iter().enumerate() {
        lines += &serde_json::to_string(&SidecarLine {
            row: Some(row),
            id: id.clone(),
            error: None,
        })?;
        lines.push('\n');
    }
    for (id, reason) in &set.failed {
        lines += &serde_json::to_string(&SidecarLine {
            row: None,
            id: id.clone(),
            error: Some(reason.clone()),
        })?;
        lines.push('\n');
    }
    f.write_all(lines.as_bytes()).map_err(|e| Error::io(&side, e))
}

/// Reads a shard and its sidecar. Values are widened from `f32`.
pub fn read_shard(path: &Path) -> Result<FeatureSet> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != SHARD_MAGIC {
        return Err(corrupt("not a feature shard".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != SHARD_VERSION {
        return Err(Error::CheckpointVersion {
            found: word(4),
            expected: SHARD_VERSION,
        });
    }
    let (count, dim) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + count * dim * 4 {
        return Err(corrupt(format!("expected {count}x{dim} values, file has {} bytes", bytes.len())));
    }
    let vals = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let features = Array2::from_shape_vec((count, dim), vals).expect("length checked");

    let side = sidecar_path(path);
    let f = fs::File::open(&side).map_err(|e| Error::io(&side, e))?;
    let mut ids = vec![None; count];
    let mut failed = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&side, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarLine = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: side.clone(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        match rec.row {
            Some(r) if r < count => ids[r] = Some(rec.id),
            Some(r) => return Err(corrupt(format!("sidecar row {r} out of range"))),
            None => failed.push((rec.id, rec.error.unwrap_or_default())),
        }
    }
    let ids = ids
        .into_iter()
        .enumerate()
        .map(|(r, id)| id.ok_or_else(|| corrupt(format!("row {r} has no id"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet { ids, features, failed })
}
