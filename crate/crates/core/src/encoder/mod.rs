//! Toy vision-transformer teacher and student encoders, the reconstruction
//! decoder, teacher pretraining and the artefact formats they produce.

mod checkpoint;
mod config;
mod decoder;
mod pretrain;
mod shards;
mod traces;
mod vit;

pub use self::checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use self::config::EncoderConfig;
pub use self::decoder::Decoder;
pub use self::pretrain::{
    embed_manifest, final_token_gradient_norm, pretrain_sample_loss, pretrain_teacher, pretrain_teacher_on,
    PretrainConfig, PretrainOutcome, DECODER_GROUP, ENCODER_GROUP,
};
pub use self::shards::{read_shard, sidecar_path, write_shard, FeatureSet, SHARD_MAGIC, SHARD_VERSION};
pub use self::traces::{load_traces, save_traces, GradientTrace};
pub use self::vit::{pool, Encoder, EncoderTrace, Features};

use std::path::Path;

use crate::error::Result;

impl Encoder {
    /// Loads the `encoder` section of a checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let mut ckpt = load_checkpoint(path)?;
        let params = ckpt.take_section("encoder")?;
        Encoder::from_parts(ckpt.config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            &Checkpoint::new(self.config().clone()).with_section("encoder", self.params().clone()),
            path,
        )
    }
}
