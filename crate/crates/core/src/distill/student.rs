use serde_json::json;

use crate::encoder::{Checkpoint, Decoder, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::seed;

pub const STUDENT_GROUP: u16 = 0;
pub const STUDENT_DECODER_GROUP: u16 = 1;
pub const PROJECTION_GROUP: u16 = 2;

/// Student encoder with its reconstruction decoder and the per-head
/// projections (student head dim → teacher head dim) used only while
/// distilling.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub projections: ParamStore,
}

impl Student {
    pub fn new(config: &EncoderConfig, teacher: &EncoderConfig, seed: u64) -> Result<Self> {
        EncoderConfig::check_pair(teacher, config)?;
        let encoder = Encoder::new(config.clone(), seed::derive(seed, &["student"]))?;
        let decoder = Decoder::new(config, seed::derive(seed, &["student"]));
        let (ds, dt) = (config.head_dim(), teacher.head_dim());
        let mut rng = seed::rng(seed::derive(seed, &["projections"]));
        let mut projections = ParamStore::new();
        for h in 0..config.heads {
            projections.push_normal(format!("head_proj.{h}"), (ds, dt), 1.0 / (ds as f64).sqrt(), &mut rng);
        }
        Ok(Self {
            encoder,
            decoder,
            projections,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn to_checkpoint(&self, teacher: &EncoderConfig) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.config().clone())
            .with_section("encoder", self.encoder.params().clone())
            .with_section("decoder", self.decoder.params().clone())
            .with_section("projections", self.projections.clone());
        ckpt.meta = json!({ "role": "student", "teacher": teacher });
        ckpt
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let config = ckpt.config.clone();
        let encoder = Encoder::from_parts(config.clone(), ckpt.take_section("encoder")?)?;
        let decoder = Decoder::from_parts(&config, ckpt.take_section("decoder")?)?;
        let projections = ckpt.take_section("projections")?;
        if projections.len() != ckpt.config.heads {
            return Err(Error::Shape(format!(
                "{} head projections for {} heads",
                projections.len(),
                ckpt.config.heads
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            projections,
        })
    }
}
