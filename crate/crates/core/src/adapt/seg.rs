use log::info;
use ndarray::linalg::kron;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde_json::json;

use super::{
    argmax_rows, with_augmented_copies, AdaptLog, AdaptOutcome, ProbeConfig, Sample, SegHeadConfig, BACKBONE_GROUP,
};
use crate::data::{AugmentationPolicy, LabelMap};
use crate::encoder::{Checkpoint, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{accumulate, AdamW, ParamStore, Tape, Var};
use crate::seed;

pub const SEG_GROUP: u16 = 1;

const PER_TAP: usize = 4;

/// `m×n` bilinear resampling matrix (half-pixel centres, edge clamped).
pub fn bilinear_matrix(m: usize, n: usize) -> Array2<f64> {
    let mut r = Array2::zeros((m, n));
    for i in 0..m {
        let src = ((i as f64 + 0.5) * n as f64 / m as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let w = src - i0 as f64;
        r[[i, i0]] += 1.0 - w;
        r[[i, i1]] += w;
    }
    r
}

/// Bilinear resize of a row-major `from` grid to a `to` grid, as a
/// `(to.0·to.1) × (from.0·from.1)` matrix acting on pixel rows.
pub fn resize_matrix_2d(to: (usize, usize), from: (usize, usize)) -> Array2<f64> {
    kron(&bilinear_matrix(to.0, from.0), &bilinear_matrix(to.1, from.1))
}

fn level_size(g: usize, exponent: i32) -> usize {
    if exponent >= 0 {
        g << exponent
    } else {
        let d = 1usize << (-exponent);
        g.div_ceil(d).max(1)
    }
}

/// FPN-style decoder over encoder taps.
///
/// Tap `i` of `n` (shallow to deep) is layer-normalised, projected to the
/// neck width and resampled to `2^(n−2−i)` times the token grid, so four
/// taps give ×4, ×2, ×1 and ×½ levels. Levels are fused top-down by
/// bilinear upsampling and addition; the finest level passes through a GELU
/// layer and a per-pixel classifier, and the scores are bilinearly
/// upsampled to the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SegHead {
    config: SegHeadConfig,
    dim: usize,
    image_size: (usize, usize),
    params: ParamStore,
    lift: Vec<Array2<f64>>,
    up: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl SegHead {
    pub fn new(config: &SegHeadConfig, backbone: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate(backbone.depth)?;
        let (d, n, c) = (backbone.dim, config.neck_dim, config.num_classes);
        let mut rng = seed::rng(seed::derive(seed, &["seg-init"]));
        let mut p = ParamStore::new();
        for i in 0..config.tap_layers.len() {
            p.push_const(format!("seg.ln{i}.weight"), (1, d), 1.0);
            p.push_const(format!("seg.ln{i}.bias"), (1, d), 0.0);
            p.push_normal(format!("seg.lateral{i}.weight"), (d, n), 1.0 / (d as f64).sqrt(), &mut rng);
            p.push_const(format!("seg.lateral{i}.bias"), (1, n), 0.0);
        }
        p.push_normal("seg.fuse.weight", (n, n), 1.0 / (n as f64).sqrt(), &mut rng);
        p.push_const("seg.fuse.bias", (1, n), 0.0);
        p.push_normal("seg.cls.weight", (n, c), 1.0 / (n as f64).sqrt(), &mut rng);
        p.push_const("seg.cls.bias", (1, c), 0.0);
        Self::from_parts(config.clone(), backbone, p)
    }

    pub fn from_parts(config: SegHeadConfig, backbone: &EncoderConfig, params: ParamStore) -> Result<Self> {
        config.validate(backbone.depth)?;
        let taps = config.tap_layers.len();
        let (d, n, c) = (backbone.dim, config.neck_dim, config.num_classes);
        let mut expect = Vec::new();
        for _ in 0..taps {
            expect.extend([(1, d), (1, d), (d, n), (1, n)]);
        }
        expect.extend([(n, n), (1, n), (n, c), (1, c)]);
        if params.len() != expect.len() || (0..params.len()).any(|i| params.get(i).dim() != expect[i]) {
            return Err(Error::Shape("segmentation head parameters do not match its config".into()));
        }
        let grid = backbone.grid();
        let exps: Vec<i32> = (0..taps)
            .map(|i| if taps == 1 { 0 } else { taps as i32 - 2 - i as i32 })
            .collect();
        let sizes: Vec<(usize, usize)> = exps.iter().map(|&e| (level_size(grid.0, e), level_size(grid.1, e))).collect();
        let lift = sizes.iter().map(|&s| resize_matrix_2d(s, grid)).collect();
        let up = (0..taps.saturating_sub(1)).map(|i| resize_matrix_2d(sizes[i], sizes[i + 1])).collect();
        let out = resize_matrix_2d(backbone.image_size, sizes[0]);
        Ok(Self {
            config,
            dim: d,
            image_size: backbone.image_size,
            params,
            lift,
            up,
            out,
        })
    }

    pub fn config(&self) -> &SegHeadConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// Records per-pixel class scores (`H·W × C`, row-major pixels) from
    /// one token matrix per tap layer.
    pub fn trace<'a>(&'a self, tape: &mut Tape<'a>, taps: &[Var], group: Option<u16>) -> Var {
        assert_eq!(taps.len(), self.config.tap_layers.len(), "one input per tap layer");
        let p = self.params.bind(tape, group);
        let levels: Vec<Var> = taps
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let q = &p[i * PER_TAP..(i + 1) * PER_TAP];
                let z = tape.layer_norm(f, q[0], q[1]);
                let z = tape.matmul(z, q[2]);
                let z = tape.add_row(z, q[3]);
                let lift = tape.constant_ref(&self.lift[i]);
                tape.matmul(lift, z)
            })
            .collect();
        let mut fused = *levels.last().expect("at least one tap");
        for i in (0..levels.len() - 1).rev() {
            let up = tape.constant_ref(&self.up[i]);
            let u = tape.matmul(up, fused);
            fused = tape.add(levels[i], u);
        }
        let h = self.params.len() - 4;
        let z = tape.matmul(fused, p[h]);
        let z = tape.add_row(z, p[h + 1]);
        let z = tape.gelu(z);
        let z = tape.matmul(z, p[h + 2]);
        let z = tape.add_row(z, p[h + 3]);
        let out = tape.constant_ref(&self.out);
        tape.matmul(out, z)
    }

    /// Score map of shape `(C, H, W)`.
    pub fn scores(&self, taps: &[Array2<f64>]) -> ndarray::Array3<f64> {
        let logits = self.logits(taps);
        let (h, w) = self.image_size;
        let c = self.config.num_classes;
        ndarray::Array3::from_shape_fn((c, h, w), |(k, y, x)| logits[[y * w + x, k]])
    }

    fn logits(&self, taps: &[Array2<f64>]) -> Array2<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = taps.iter().map(|t| tape.constant_ref(t)).collect();
        let l = self.trace(&mut tape, &vars, None);
        tape.value(l).clone()
    }

    pub fn predict(&self, taps: &[Array2<f64>]) -> LabelMap {
        let labels = argmax_rows(&self.logits(taps));
        Array2::from_shape_vec(self.image_size, labels.into_iter().map(|l| l as u8).collect()).expect("H·W labels")
    }

    pub fn to_checkpoint(&self, backbone: &EncoderConfig) -> Checkpoint {
        let mut c = Checkpoint::new(backbone.clone()).with_section("seg_head", self.params.clone());
        c.meta = json!({ "head": "segmentation", "seg_head": self.config });
        c
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let config: SegHeadConfig = serde_json::from_value(ckpt.meta["seg_head"].clone())?;
        let params = ckpt.take_section("seg_head")?;
        Self::from_parts(config, &ckpt.config, params)
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }
}

/// Tap-layer token matrices of one image.
pub(crate) fn tap_features(backbone: &Encoder, sample: &Sample, taps: &[usize]) -> Result<Vec<Array2<f64>>> {
    Ok(backbone
        .forward(&sample.image, taps, false)?
        .taps
        .into_iter()
        .map(|(_, f)| f)
        .collect())
}

/// Flattened per-pixel labels, validated against the head.
pub(crate) fn mask_labels(sample: &Sample, size: (usize, usize), num_classes: usize) -> Result<Vec<usize>> {
    let mask = sample
        .mask
        .as_ref()
        .ok_or_else(|| Error::Config(format!("sample {:?} has no segmentation mask", sample.id)))?;
    if mask.dim() != size || (sample.image.height(), sample.image.width()) != size {
        return Err(Error::Shape(format!(
            "sample {:?}: mask {:?} and image {}x{} must both be {:?}",
            sample.id,
            mask.dim(),
            sample.image.height(),
            sample.image.width(),
            size
        )));
    }
    if let Some(&l) = mask.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::Config(format!(
            "sample {:?} has mask label {l} but num_classes = {num_classes}",
            sample.id
        )));
    }
    Ok(mask.iter().map(|&l| l as usize).collect())
}

/// Trains the segmentation head with pixelwise cross-entropy. The backbone
/// is frozen (taps computed once) unless `cfg.freeze_backbone` is false.
pub fn train_seg(
    backbone: &Encoder,
    samples: &[Sample],
    head_cfg: &SegHeadConfig,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<AdaptOutcome<SegHead>> {
    cfg.validate()?;
    if cfg.num_classes != head_cfg.num_classes {
        return Err(Error::Config("training and head configs disagree on num_classes".into()));
    }
    if samples.is_empty() {
        return Err(Error::Empty("no training samples for the segmentation head".into()));
    }
    let bcfg = backbone.config();
    let mut head = SegHead::new(head_cfg, bcfg, seed)?;
    for s in samples {
        mask_labels(s, bcfg.image_size, head_cfg.num_classes)?;
    }
    let policy = AugmentationPolicy::segmentation(seed::derive(seed, &["seg-augment"]));
    let samples = &with_augmented_copies(samples, cfg.augment_copies, &policy)[..];
    let labels = samples
        .iter()
        .map(|s| mask_labels(s, bcfg.image_size, head_cfg.num_classes))
        .collect::<Result<Vec<_>>>()?;
    let taps = &head_cfg.tap_layers;
    let cache = if cfg.freeze_backbone {
        samples
            .iter()
            .map(|s| tap_features(backbone, s, taps))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut encoder = backbone.clone();
    let mut opt_h = AdamW::new(&head.params, cfg.weight_decay);
    let mut opt_e = AdamW::new(encoder.params(), cfg.weight_decay);
    let n = samples.len();
    let pixels = labels[0].len() as f64;
    let total = cfg.total_steps(n);
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, &["seg-shuffle", &epoch.to_string()])));
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0usize, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let k = 1.0 / batch.len() as f64;
            let (mut gh, mut ge) = (Vec::new(), Vec::new());
            for &i in batch {
                let mut tape = Tape::new();
                let inputs: Vec<Var> = if cfg.freeze_backbone {
                    cache[i].iter().map(|t| tape.constant_ref(t)).collect()
                } else {
                    let x = tape.constant(encoder.tokenize(&samples[i].image)?);
                    let tr = encoder.trace(&mut tape, x, Some(BACKBONE_GROUP));
                    taps.iter().map(|&t| tr.blocks[t - 1]).collect()
                };
                let logits = head.trace(&mut tape, &inputs, Some(SEG_GROUP));
                let loss = tape.cross_entropy(logits, &labels[i]);
                let l = tape.scalar(loss);
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss("segmentation cross-entropy"));
                }
                loss_sum += l;
                hits += argmax_rows(tape.value(logits)).iter().zip(&labels[i]).filter(|(p, y)| p == y).count();
                let g = tape.backward(loss);
                accumulate(&mut gh, g.for_group(SEG_GROUP, head.params.len()), k);
                if !cfg.freeze_backbone {
                    accumulate(&mut ge, g.for_group(BACKBONE_GROUP, encoder.params().len()), k);
                }
            }
            lr = cfg.lr(step, total)?;
            opt_h.step(&mut head.params, &gh, lr);
            if !cfg.freeze_backbone {
                opt_e.step(encoder.params_mut(), &ge, lr);
            }
            step += 1;
        }
        log.push(AdaptLog {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_metric: hits as f64 / (n as f64 * pixels),
            lr,
        });
    }
    if let Some(last) = log.last() {
        info!("seg head: final loss {:.4}, pixel accuracy {:.3}", last.loss, last.train_metric);
    }
    Ok(AdaptOutcome {
        head,
        tuned_backbone: (!cfg.freeze_backbone).then_some(encoder),
        log,
    })
}
