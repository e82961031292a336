use ndarray::{Array1, Array2, Axis};

use super::config::EncoderConfig;
use crate::data::{patchify, ImageTensor};
use crate::error::{Error, Result};
use crate::nn::{linear, ParamStore, Tape, Var};
use crate::seed;

const INIT_STD: f64 = 0.02;

// Parameter slots inside one transformer block.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const QKV_W: usize = 2;
const QKV_B: usize = 3;
const PROJ_W: usize = 4;
const PROJ_B: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const FC1_W: usize = 8;
const FC1_B: usize = 9;
const FC2_W: usize = 10;
const FC2_B: usize = 11;
const PER_BLOCK: usize = 12;

const PATCH_W: usize = 0;
const PATCH_B: usize = 1;
const POS: usize = 2;
const STEM: usize = 3;

/// Pre-norm vision transformer over non-overlapping patches, without a
/// class token.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamStore,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// Output of every block (before the final norm), index 0 = block 1.
    pub blocks: Vec<Var>,
    /// Final token features (after the final norm).
    pub output: Var,
    /// Per-head attention outputs of the last block, before the output
    /// projection.
    pub heads: Vec<Var>,
    /// Attention output of the last block after the output projection.
    pub attention: Var,
}

/// Materialised features of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    /// `(layer, T×dim tokens)` for each requested tap, in request order.
    pub taps: Vec<(usize, Array2<f64>)>,
    pub output: Array2<f64>,
    pub heads: Option<Vec<Array2<f64>>>,
}

fn expected_shapes(c: &EncoderConfig) -> Vec<(String, (usize, usize))> {
    let (d, p2, hidden) = (c.dim, c.patch_size * c.patch_size, c.dim * c.mlp_ratio);
    let mut v = vec![
        ("patch_embed.weight".to_string(), (p2, d)),
        ("patch_embed.bias".to_string(), (1, d)),
        ("pos_embed".to_string(), (c.tokens(), d)),
    ];
    for b in 0..c.depth {
        let n = |s: &str| format!("blocks.{b}.{s}");
        v.extend([
            (n("norm1.weight"), (1, d)),
            (n("norm1.bias"), (1, d)),
            (n("attn.qkv.weight"), (d, 3 * d)),
            (n("attn.qkv.bias"), (1, 3 * d)),
            (n("attn.proj.weight"), (d, d)),
            (n("attn.proj.bias"), (1, d)),
            (n("norm2.weight"), (1, d)),
            (n("norm2.bias"), (1, d)),
            (n("mlp.fc1.weight"), (d, hidden)),
            (n("mlp.fc1.bias"), (1, hidden)),
            (n("mlp.fc2.weight"), (hidden, d)),
            (n("mlp.fc2.bias"), (1, d)),
        ]);
    }
    v.push(("norm.weight".to_string(), (1, d)));
    v.push(("norm.bias".to_string(), (1, d)));
    v
}

impl Encoder {
    /// Randomly initialised encoder: truncated-normal weights (σ = 0.02),
    /// zero biases, unit norm gains.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(seed, &["encoder-init"]));
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes(&config) {
            if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "norm.weight" {
                params.push_const(name, shape, 1.0);
            } else if name.ends_with("bias") {
                params.push_const(name, shape, 0.0);
            } else {
                params.push_normal(name, shape, INIT_STD, &mut rng);
            }
        }
        Ok(Self { config, params })
    }

    /// Reassembles an encoder from stored tensors, checking names and shapes.
    pub fn from_parts(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expect = expected_shapes(&config);
        if expect.len() != params.len() {
            return Err(Error::Shape(format!(
                "encoder expects {} tensors, found {}",
                expect.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in expect.iter().enumerate() {
            if params.name(i) != name || params.get(i).dim() != *shape {
                return Err(Error::Shape(format!(
                    "tensor {i}: expected {name} {shape:?}, found {} {:?}",
                    params.name(i),
                    params.get(i).dim()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Patch tokens (`T × p²`) of an image, checking its size.
    pub fn tokenize(&self, image: &ImageTensor) -> Result<Array2<f64>> {
        let (h, w) = self.config.image_size;
        if image.height() != h || image.width() != w {
            return Err(Error::Shape(format!(
                "encoder expects {h}x{w} input, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(patchify(image.pixels(), self.config.patch_size))
    }

    /// Records a forward pass over patch tokens on `tape`. With
    /// `group = None` the weights enter as constants.
    pub fn trace<'a>(&'a self, tape: &mut Tape<'a>, tokens: Var, group: Option<u16>) -> EncoderTrace {
        let p = self.params.bind(tape, group);
        let c = &self.config;
        let mut x = linear(tape, tokens, p[PATCH_W], Some(p[PATCH_B]));
        x = tape.add(x, p[POS]);

        let (d, dh) = (c.dim, c.head_dim());
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut blocks = Vec::with_capacity(c.depth);
        let mut heads = Vec::new();
        let mut attention = x;
        for b in 0..c.depth {
            let w = |k: usize| p[STEM + b * PER_BLOCK + k];
            let h = tape.layer_norm(x, w(LN1_G), w(LN1_B));
            let qkv = linear(tape, h, w(QKV_W), Some(w(QKV_B)));
            let mut outs = Vec::with_capacity(c.heads);
            for i in 0..c.heads {
                let q = tape.slice_cols(qkv, i * dh, dh);
                let k = tape.slice_cols(qkv, d + i * dh, dh);
                let v = tape.slice_cols(qkv, 2 * d + i * dh, dh);
                let s = tape.matmul_t(q, k);
                let s = tape.scale(s, inv_sqrt);
                let a = tape.softmax_rows(s);
                outs.push(tape.matmul(a, v));
            }
            let cat = tape.concat_cols(&outs);
            let attn = linear(tape, cat, w(PROJ_W), Some(w(PROJ_B)));
            x = tape.add(x, attn);
            let h = tape.layer_norm(x, w(LN2_G), w(LN2_B));
            let m = linear(tape, h, w(FC1_W), Some(w(FC1_B)));
            let m = tape.gelu(m);
            let m = linear(tape, m, w(FC2_W), Some(w(FC2_B)));
            x = tape.add(x, m);
            blocks.push(x);
            if b + 1 == c.depth {
                heads = outs;
                attention = attn;
            }
        }
        let n = self.params.len();
        let output = tape.layer_norm(x, p[n - 2], p[n - 1]);
        EncoderTrace {
            blocks,
            output,
            heads,
            attention,
        }
    }

    /// Inference pass. `taps` are 1-based block indices.
    pub fn forward(&self, image: &ImageTensor, taps: &[usize], want_heads: bool) -> Result<Features> {
        if let Some(t) = taps.iter().find(|t| !(1..=self.config.depth).contains(*t)) {
            return Err(Error::Config(format!("tap layer {t} outside [1, {}]", self.config.depth)));
        }
        let tokens = self.tokenize(image)?;
        let mut tape = Tape::new();
        let x = tape.constant(tokens);
        let tr = self.trace(&mut tape, x, None);
        Ok(Features {
            taps: taps
                .iter()
                .map(|&t| (t, tape.value(tr.blocks[t - 1]).clone()))
                .collect(),
            output: tape.value(tr.output).clone(),
            heads: want_heads.then(|| tr.heads.iter().map(|&h| tape.value(h).clone()).collect()),
        })
    }

    /// Mean-pooled final-layer features.
    pub fn embed(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        Ok(pool(&self.forward(image, &[], false)?.output))
    }
}

/// Arithmetic mean over tokens (rows).
pub fn pool(tokens: &Array2<f64>) -> Array1<f64> {
    tokens
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(tokens.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_phantom;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            depth: 2,
            dim: 8,
            heads: 2,
            patch_size: 4,
            image_size: (8, 8),
            mlp_ratio: 2,
            mid_layer: 1,
            tap_layers: vec![1, 2],
            use_class_token: false,
        }
    }

    #[test]
    fn desk_student_shapes() {
        let enc = Encoder::new(EncoderConfig::student_desk(), 0).unwrap();
        let (img, _) = render_phantom(1, 64, 64, &mut seed::rng(1));
        let f = enc.forward(&img, &[3, 5, 7, 11], true).unwrap();
        for (_, t) in &f.taps {
            assert_eq!(t.dim(), (64, 32));
        }
        assert_eq!(f.output.dim(), (64, 32));
        let heads = f.heads.unwrap();
        assert_eq!(heads.len(), 4);
        assert!(heads.iter().all(|h| h.dim() == (64, 8)));
        assert!(enc.forward(&img, &[13], false).is_err());
    }

    #[test]
    fn forward_is_deterministic_and_read_only() {
        let enc = Encoder::new(tiny(), 3).unwrap();
        let before = enc.checksum();
        let img = ImageTensor::from_clipped(Array2::from_shape_fn((8, 8), |(y, x)| (y * 8 + x) as f64 / 64.0));
        assert_eq!(enc.forward(&img, &[1], true).unwrap(), enc.forward(&img, &[1], true).unwrap());
        assert_eq!(before, enc.checksum());
    }

    #[test]
    fn heads_recompose_attention_output() {
        let enc = Encoder::new(tiny(), 5).unwrap();
        let img = ImageTensor::from_clipped(Array2::from_shape_fn((8, 8), |(y, x)| ((y + 2 * x) % 7) as f64 / 7.0));
        let mut tape = Tape::new();
        let x = tape.constant(enc.tokenize(&img).unwrap());
        let tr = enc.trace(&mut tape, x, None);
        let parts: Vec<_> = tr.heads.iter().map(|&h| tape.value(h).view().to_owned()).collect();
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        let cat = ndarray::concatenate(Axis(1), &views).unwrap();
        let n = 3 + PER_BLOCK;
        let proj = cat.dot(enc.params().get(n + PROJ_W)) + enc.params().get(n + PROJ_B);
        let diff = (&proj - tape.value(tr.attention)).mapv(f64::abs);
        assert!(diff.iter().all(|d| *d < 1e-6));
    }

    #[test]
    fn pool_oracles() {
        let one = Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 3.5]).unwrap();
        assert_eq!(pool(&one).to_vec(), vec![1.0, -2.0, 3.5]);
        let sym = Array2::from_shape_vec((2, 2), vec![0.3, -1.0, -0.3, 1.0]).unwrap();
        assert_eq!(pool(&sym).to_vec(), vec![0.0, 0.0]);
        let mut rng = seed::rng(9);
        let many = Array2::from_shape_simple_fn((64, 5), || rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let p = pool(&many);
        for c in 0..5 {
            let mut s = 0.0;
            for r in 0..64 {
                s += many[[r, c]];
            }
            assert!((p[c] - s / 64.0).abs() < 1e-12);
        }
    }

    #[test]
    fn from_parts_checks_layout() {
        let enc = Encoder::new(tiny(), 0).unwrap();
        let cfg = enc.config().clone();
        let params = enc.clone().into_params();
        assert_eq!(Encoder::from_parts(cfg.clone(), params.clone()).unwrap(), enc);
        let mut other = cfg;
        other.dim = 4;
        assert!(Encoder::from_parts(other, params).is_err());
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let enc = Encoder::new(tiny(), 0).unwrap();
        assert!(enc.forward(&ImageTensor::constant(16, 16, 0.5), &[], false).is_err());
    }
}
