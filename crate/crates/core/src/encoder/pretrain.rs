//! Dual-masked reconstruction pretraining of the teacher, with per-sample
//! gradient-norm traces for coreset scoring.

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::decoder::Decoder;
use super::traces::GradientTrace;
use super::vit::Encoder;
use crate::data::{patchify, ImageTensor, Manifest, Split};
use crate::error::{Error, Result};
use crate::masking::MaskingConfig;
use crate::nn::{accumulate, AdamW, Tape, Var};
use crate::schedule::WarmupPoly;
use crate::seed;

pub const ENCODER_GROUP: u16 = 0;
pub const DECODER_GROUP: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: WarmupPoly,
    pub weight_decay: f64,
    /// Number of leading epochs whose gradient norms are recorded.
    pub trace_epochs: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            schedule: WarmupPoly {
                lr0: 1e-3,
                ..WarmupPoly::default()
            },
            weight_decay: 0.05,
            trace_epochs: 10,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("pretraining needs at least one epoch and batch size ≥ 1".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub decoder: Decoder,
    /// One trace per training sample, in input order.
    pub traces: Vec<GradientTrace>,
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Reconstruction loss of one sample: full-image MSE of the decoded final
/// tokens of each masked view against the original, summed over views.
pub fn pretrain_sample_loss<'a>(
    tape: &mut Tape<'a>,
    encoder: &'a Encoder,
    decoder: &'a Decoder,
    views: [&ImageTensor; 2],
    original: &ImageTensor,
    trainable: bool,
) -> Result<Var> {
    let target = tape.constant(patchify(original.pixels(), encoder.config().patch_size));
    let mut total = None;
    for view in views {
        let x = tape.constant(encoder.tokenize(view)?);
        let tr = encoder.trace(tape, x, trainable.then_some(ENCODER_GROUP));
        let recon = decoder.trace(tape, tr.output, trainable.then_some(DECODER_GROUP));
        let l = tape.mse(recon, target);
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    Ok(total.expect("two views"))
}

/// Frobenius norm of ∂loss/∂(final tokens of both views) at fixed weights.
pub fn final_token_gradient_norm(
    encoder: &Encoder,
    decoder: &Decoder,
    views: [&ImageTensor; 2],
    original: &ImageTensor,
) -> Result<f64> {
    let finals = views
        .iter()
        .map(|v| encoder.forward(v, &[], false).map(|f| f.output))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let target = tape.constant(patchify(original.pixels(), encoder.config().patch_size));
    let mut leaves = Vec::new();
    let mut total = None;
    for f in finals {
        let z = tape.watched(f);
        leaves.push(z);
        let recon = decoder.trace(&mut tape, z, None);
        let l = tape.mse(recon, target);
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let grads = tape.backward(total.expect("two views"));
    let sq: f64 = leaves
        .iter()
        .filter_map(|z| grads.wrt(*z))
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(sq.sqrt())
}

/// Pretrains a teacher on in-memory images.
///
/// Training views are seeded per (epoch, sample id). After each of the
/// first `trace_epochs` epochs a separate pass records every sample's
/// final-token gradient norm at the epoch's weights, with views seeded by
/// the epoch alone so identical images receive identical traces.
pub fn pretrain_teacher_on(
    images: &[(String, ImageTensor)],
    config: &EncoderConfig,
    masking: &MaskingConfig,
    train: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if images.is_empty() {
        return Err(Error::Empty("train split has no samples".into()));
    }
    config.validate()?;
    masking.validate(config.patch_size, config.image_size)?;
    train.validate()?;

    let mut encoder = Encoder::new(config.clone(), seed::derive(seed, &["teacher"]))?;
    let mut decoder = Decoder::new(config, seed::derive(seed, &["teacher"]));
    let mut opt_e = AdamW::new(encoder.params(), train.weight_decay);
    let mut opt_d = AdamW::new(decoder.params(), train.weight_decay);
    let p = config.patch_size;

    let batches_per_epoch = images.len().div_ceil(train.batch_size);
    let total_steps = batches_per_epoch * train.epochs;
    let trace_epochs = train.trace_epochs.min(train.epochs);
    let mut norms: Vec<Vec<f64>> = vec![Vec::with_capacity(trace_epochs); images.len()];
    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut step = 0;

    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, &["pretrain-shuffle", &epoch.to_string()])));
        let mut loss_sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let k = 1.0 / batch.len() as f64;
            let mut ge = Vec::new();
            let mut gd = Vec::new();
            for &i in batch {
                let (id, img) = &images[i];
                let vseed = seed::derive(seed, &["pretrain-views", &epoch.to_string(), id]);
                let (spa, freq) = masking.view_pair(img, p, vseed)?;
                let mut tape = Tape::new();
                let loss = pretrain_sample_loss(&mut tape, &encoder, &decoder, [&spa.image, &freq.image], img, true)?;
                let l = tape.scalar(loss);
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss("pretrain reconstruction"));
                }
                loss_sum += l;
                let grads = tape.backward(loss);
                accumulate(&mut ge, grads.for_group(ENCODER_GROUP, encoder.params().len()), k);
                accumulate(&mut gd, grads.for_group(DECODER_GROUP, decoder.params().len()), k);
            }
            let lr = train.schedule.at(step, total_steps);
            opt_e.step(encoder.params_mut(), &ge, lr);
            opt_d.step(decoder.params_mut(), &gd, lr);
            step += 1;
        }
        let mean = loss_sum / images.len() as f64;
        info!("pretrain epoch {} loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);

        if epoch < trace_epochs {
            let tseed = seed::derive(seed, &["trace-views", &epoch.to_string()]);
            for (n, (_, img)) in norms.iter_mut().zip(images) {
                let (spa, freq) = masking.view_pair(img, p, tseed)?;
                n.push(final_token_gradient_norm(&encoder, &decoder, [&spa.image, &freq.image], img)?);
            }
        }
    }

    let traces = images
        .iter()
        .zip(norms)
        .map(|((id, _), n)| GradientTrace::new(id.clone(), n))
        .collect();
    Ok(PretrainOutcome {
        encoder,
        decoder,
        traces,
        epoch_losses,
    })
}

/// Pretrains on the train split of a manifest.
pub fn pretrain_teacher(
    manifest: &Manifest,
    config: &EncoderConfig,
    masking: &MaskingConfig,
    train: &PretrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    let split = manifest.split(Split::Train);
    if split.is_empty() {
        return Err(Error::Empty("train split has no samples".into()));
    }
    let images = split.load_images(config.image_size)?;
    pretrain_teacher_on(&images, config, masking, train, seed)
}

/// Pooled final-layer features for every manifest record, in order.
/// Images that fail to load are reported and skipped.
pub fn embed_manifest(encoder: &Encoder, manifest: &Manifest) -> super::shards::FeatureSet {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for r in &manifest.records {
        let res = crate::data::load_image(&manifest.resolve(&r.path), encoder.config().image_size)
            .and_then(|img| encoder.embed(&img));
        match res {
            Ok(v) => {
                ids.push(r.id.clone());
                rows.extend(v);
            }
            Err(e) => {
                log::warn!("sample {}: {e}", r.id);
                failed.push((r.id.clone(), e.to_string()));
            }
        }
    }
    let dim = encoder.config().dim;
    let features = Array2::from_shape_vec((ids.len(), dim), rows).expect("dim per row");
    super::shards::FeatureSet { ids, features, failed }
}
