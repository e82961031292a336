use ndarray::Array2;

use super::config::EncoderConfig;
use crate::data::{unpatchify, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::{linear, ParamStore, Tape, Var};
use crate::seed;

/// Linear token → patch-pixel projection used for masked-image reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    dim: usize,
    patch_size: usize,
    image_size: (usize, usize),
    params: ParamStore,
}

impl Decoder {
    pub fn new(config: &EncoderConfig, seed: u64) -> Self {
        let p2 = config.patch_size * config.patch_size;
        let mut rng = seed::rng(seed::derive(seed, &["decoder-init"]));
        let mut params = ParamStore::new();
        params.push_normal("decoder.weight", (config.dim, p2), 0.02, &mut rng);
        params.push_const("decoder.bias", (1, p2), 0.0);
        Self {
            dim: config.dim,
            patch_size: config.patch_size,
            image_size: config.image_size,
            params,
        }
    }

    pub fn from_parts(config: &EncoderConfig, params: ParamStore) -> Result<Self> {
        let p2 = config.patch_size * config.patch_size;
        if params.len() != 2 || params.get(0).dim() != (config.dim, p2) || params.get(1).dim() != (1, p2) {
            return Err(Error::Shape("decoder tensors do not match the encoder config".into()));
        }
        Ok(Self {
            dim: config.dim,
            patch_size: config.patch_size,
            image_size: config.image_size,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Predicted patch pixels (`T × p²`) on a tape.
    pub fn trace<'a>(&'a self, tape: &mut Tape<'a>, tokens: Var, group: Option<u16>) -> Var {
        let p = self.params.bind(tape, group);
        linear(tape, tokens, p[0], Some(p[1]))
    }

    /// Unclipped reconstruction of an `H×W` image from `T×dim` tokens.
    pub fn decode(&self, tokens: &Array2<f64>) -> Result<Array2<f64>> {
        let (h, w) = self.image_size;
        let t = (h / self.patch_size) * (w / self.patch_size);
        if tokens.dim() != (t, self.dim) {
            return Err(Error::Shape(format!(
                "decoder expects {t}x{} tokens, got {:?}",
                self.dim,
                tokens.dim()
            )));
        }
        let patches = tokens.dot(self.params.get(0)) + self.params.get(1);
        Ok(unpatchify(&patches, h, w, self.patch_size))
    }

    /// Clipped copy for export.
    pub fn decode_image(&self, tokens: &Array2<f64>) -> Result<ImageTensor> {
        Ok(ImageTensor::from_clipped(self.decode(tokens)?))
    }
}
