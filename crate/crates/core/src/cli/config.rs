use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adapt::AdaptConfig;
use crate::coreset::{CoresetConfig, Strategy};
use crate::distill::DistillConfig;
use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::masking::MaskingConfig;

/// Environment variable overriding `paths.output_root`.
pub const OUT_ENV: &str = "TINYDISTILL_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Where `generate` writes phantoms and their manifest.
    pub data_root: PathBuf,
    /// Manifest to read; defaults to `<data_root>/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
    pub output_root: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_root: "data".into(),
            manifest: None,
            output_root: "runs".into(),
        }
    }
}

impl Paths {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.data_root.join("manifest.jsonl"))
    }
}

/// Synthetic data generated by the `generate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub phantoms: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Train / val / test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            phantoms: 512,
            classes: 3,
            height: 64,
            width: 64,
            split: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub teacher: EncoderConfig,
    pub student: EncoderConfig,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            teacher: EncoderConfig::teacher_desk(),
            student: EncoderConfig::student_desk(),
        }
    }
}

/// Axes swept by the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Coreset sizes for the subset sweep, as fractions of the pool.
    pub budget_fractions: Vec<f64>,
    /// Selection strategies compared at the configured budget.
    pub strategies: Vec<Strategy>,
    /// Also train and score a linear probe for every variant.
    pub evaluate: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            budget_fractions: vec![0.125, 0.25, 0.5],
            strategies: vec![Strategy::FeatureGradient, Strategy::Random],
            evaluate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub masking: MaskingConfig,
    pub encoder: EncoderSection,
    pub pretrain: PretrainConfig,
    pub coreset: CoresetConfig,
    pub distill: DistillConfig,
    pub adapt: AdaptConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            masking: MaskingConfig::default(),
            encoder: EncoderSection::default(),
            pretrain: PretrainConfig::default(),
            coreset: CoresetConfig::default(),
            distill: DistillConfig {
                epochs: 30,
                schedule: crate::schedule::WarmupPoly {
                    lr0: 1e-2,
                    ..Default::default()
                },
                ..DistillConfig::default()
            },
            adapt: AdaptConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks every section; nothing is written before this passes.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes == 0 || d.phantoms < d.classes || d.height == 0 || d.width == 0 {
            return Err(Error::Config("data needs phantoms ≥ classes ≥ 1 and a nonzero size".into()));
        }
        if d.split.iter().any(|r| !(0.0..=1.0).contains(r)) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("data.split must be three fractions summing to 1".into()));
        }
        let (t, s) = (&self.encoder.teacher, &self.encoder.student);
        t.validate()?;
        s.validate()?;
        EncoderConfig::check_pair(t, s)?;
        self.masking.validate(t.patch_size, t.image_size)?;
        self.pretrain.validate()?;
        self.coreset.validate()?;
        self.distill.validate(s)?;
        self.adapt.validate(s.depth)?;
        if self.sweep.budget_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("sweep.budget_fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Defaults, then the optional JSON file (deep-merged, so partial files
    /// are fine), then dotted overrides, then `TINYDISTILL_OUT`.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let user: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, user, "")?;
        }
        for (key, raw) in overrides {
            set_dotted(&mut value, key, parse_value(raw))?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(out) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            cfg.paths.output_root = PathBuf::from(out);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// JSON if it parses, else a bare string (so `--distill.mim=spatial` works).
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, user: Value, at: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::Config(format!("unknown config key {path:?}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Sets `a.b.c = value`; every segment must already exist.
pub fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{:?} is not a section", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    Err(Error::Config("empty config key".into()))
}

/// First 12 hex digits of the SHA-256 of the canonical JSON of `v`.
pub fn content_hash<T: Serialize>(v: &T) -> String {
    let canonical = serde_json::to_string(&serde_json::to_value(v).expect("serialisable")).expect("json");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Top-level keys accepted as dotted overrides.
pub const SECTIONS: [&str; 10] = [
    "seed", "paths", "data", "masking", "encoder", "pretrain", "coreset", "distill", "adapt", "sweep",
];

/// Splits `args` into dotted config overrides (`--distill.lambda_recon=0.5`
/// or `--distill.lambda_recon 0.5`) and the remaining arguments.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let head = key.split('.').next().unwrap_or("");
        if !SECTIONS.contains(&head) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next_if(|n| !n.starts_with("--"))
                .ok_or_else(|| Error::Config(format!("override --{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_partial_files() {
        let (rest, ov) = extract_overrides(
            ["distill", "--distill.lambda_recon=0.5", "--force", "--distill.mim", "spatial", "--seed=7"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap();
        assert_eq!(rest, vec!["distill", "--force"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"encoder": {"student": {"dim": 16}}, "coreset": {"budget": 5}}"#).unwrap();
        let c = RunConfig::load(Some(&p), &ov).unwrap();
        assert_eq!(c.distill.lambda_recon, 0.5);
        assert_eq!(c.distill.mim, crate::distill::MimMode::Spatial);
        assert_eq!(c.seed, 7);
        assert_eq!(c.encoder.student.dim, 16);
        assert_eq!(c.encoder.student.depth, 12);
        assert_eq!(c.coreset.budget, Some(5));

        assert!(RunConfig::load(None, &[("distill.lambda".into(), "1".into())]).is_err());
        std::fs::write(&p, r#"{"distil": {}}"#).unwrap();
        assert!(RunConfig::load(Some(&p), &[]).is_err());
    }

    #[test]
    fn hashes_are_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(content_hash(&a), content_hash(&b));
        b.distill.lambda_recon = 0.5;
        assert_ne!(content_hash(&a), content_hash(&b));
        assert_eq!(content_hash(&a).len(), 12);
    }
}
