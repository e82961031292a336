//! Self-describing checkpoint container.
//!
//! Layout (little-endian): magic `TDCK`, `u32` version, `u64` header length,
//! JSON header (encoder config, metadata, tensor names and shapes), the
//! tensor values as `f64` in header order, then a SHA-256 digest of every
//! preceding byte.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter groups plus the encoder config they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub meta: serde_json::Value,
    pub sections: Vec<(String, ParamStore)>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: (usize, usize),
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    meta: serde_json::Value,
    sections: Vec<SectionHeader>,
}

impl Checkpoint {
    pub fn new(config: EncoderConfig) -> Self {
        Self {
            config,
            meta: serde_json::Value::Null,
            sections: Vec::new(),
        }
    }

    pub fn with_section(mut self, name: &str, store: ParamStore) -> Self {
        self.sections.push((name.to_string(), store));
        self
    }

    pub fn section(&self, name: &str) -> Option<&ParamStore> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn take_section(&mut self, name: &str) -> Result<ParamStore> {
        let i = self
            .sections
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Other(format!("checkpoint has no {name:?} section")))?;
        Ok(self.sections.remove(i).1)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            sections: self
                .sections
                .iter()
                .map(|(name, store)| SectionHeader {
                    name: name.clone(),
                    tensors: store
                        .iter()
                        .map(|(n, t)| TensorHeader {
                            name: n.to_string(),
                            shape: t.dim(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, store) in &self.sections {
            for (_, t) in store.iter() {
                for v in t.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 + 32 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint (bad magic or too short)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        let mut data = &body[16 + hlen..];
        let mut sections = Vec::with_capacity(header.sections.len());
        for sec in header.sections {
            let mut store = ParamStore::new();
            for t in sec.tensors {
                let n = t.shape.0 * t.shape.1;
                if data.len() < n * 8 {
                    return Err(corrupt("tensor data shorter than header declares"));
                }
                let (raw, rest) = data.split_at(n * 8);
                let vals = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                store.push(t.name, Array2::from_shape_vec(t.shape, vals).expect("shape matches length"));
                data = rest;
            }
            sections.push((sec.name, store));
        }
        if !data.is_empty() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            meta: header.meta,
            sections,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

/// Loads a checkpoint and insists that its stored config equals `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &EncoderConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "{} stores {:?}, requested {:?}",
            path.display(),
            ckpt.config,
            expected
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageTensor;
    use crate::encoder::{Decoder, Encoder};

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            patch_size: 4,
            image_size: (8, 8),
            mlp_ratio: 2,
            mid_layer: 1,
            tap_layers: vec![2],
            use_class_token: false,
        }
    }

    fn sample() -> (Encoder, Checkpoint) {
        let enc = Encoder::new(cfg(), 11).unwrap();
        let dec = Decoder::new(&cfg(), 11);
        let ckpt = Checkpoint::new(cfg())
            .with_section("encoder", enc.params().clone())
            .with_section("decoder", dec.params().clone());
        (enc, ckpt)
    }

    #[test]
    fn round_trip_reproduces_forward_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tdck");
        let (enc, ckpt) = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let mut back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        let enc2 = Encoder::from_parts(back.config.clone(), back.take_section("encoder").unwrap()).unwrap();
        let img = ImageTensor::from_clipped(Array2::from_shape_fn((8, 8), |(y, x)| (y ^ x) as f64 / 8.0));
        assert_eq!(enc.forward(&img, &[1, 2], true).unwrap(), enc2.forward(&img, &[1, 2], true).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tdck");
        let (_, ckpt) = sample();
        let bytes = ckpt.to_bytes().unwrap();
        fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn version_and_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tdck");
        let (_, ckpt) = sample();
        let mut bytes = ckpt.to_bytes().unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointVersion { found: 9, .. })));

        save_checkpoint(&ckpt, &path).unwrap();
        let mut other = cfg();
        other.depth = 3;
        assert!(matches!(
            load_checkpoint_expecting(&path, &other),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(load_checkpoint_expecting(&path, &cfg()).is_ok());
    }
}
