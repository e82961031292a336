use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{sample_objective, TeacherTargets};
use super::student::{Student, PROJECTION_GROUP, STUDENT_DECODER_GROUP, STUDENT_GROUP};
use super::{DistillConfig, Weighting};
use crate::data::ImageTensor;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::masking::{MaskedView, MaskingConfig};
use crate::nn::{accumulate, AdamW, Tape};
use crate::seed;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_distill: f64,
    pub loss_recon_spa: f64,
    pub loss_recon_freq: f64,
    pub mean_s_cons: f64,
    pub lr: f64,
}

/// Validation losses after an epoch, same objective as training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_distill: f64,
    pub loss_recon_spa: f64,
    pub loss_recon_freq: f64,
    pub mean_s_cons: f64,
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub student: Student,
    pub log: Vec<EpochLog>,
    pub val_log: Vec<ValLog>,
    pub teacher_checksum_before: String,
    pub teacher_checksum_after: String,
}

#[derive(Default)]
struct Sums {
    total: f64,
    distill: f64,
    spa: f64,
    freq: f64,
    s: f64,
    n: usize,
}

impl Sums {
    fn mean(&self) -> [f64; 5] {
        let n = self.n.max(1) as f64;
        [self.total / n, self.distill / n, self.spa / n, self.freq / n, self.s / n]
    }
}

fn views(masking: &MaskingConfig, img: &ImageTensor, patch: usize, s: u64) -> Result<(MaskedView, MaskedView)> {
    masking.view_pair(img, patch, s)
}

/// Precomputed validation inputs: fixed views, teacher targets and `s_cons`.
struct ValItem {
    original: ImageTensor,
    spa: ImageTensor,
    freq: ImageTensor,
    targets: TeacherTargets,
    s_cons: f64,
}

fn weight(cfg: &DistillConfig, targets: &TeacherTargets) -> f64 {
    match cfg.weighting {
        Weighting::Dynamic => targets.consistency(),
        Weighting::Fixed => 1.0,
    }
}

fn evaluate(student: &Student, items: &[ValItem], cfg: &DistillConfig) -> Result<[f64; 5]> {
    let mut sums = Sums::default();
    for it in items {
        let mut tape = Tape::new();
        let t = sample_objective(
            &mut tape,
            student,
            &it.targets,
            [&it.spa, &it.freq],
            &it.original,
            it.s_cons,
            cfg,
            false,
        )?;
        sums.total += tape.scalar(t.total);
        sums.distill += tape.scalar(t.distill);
        sums.spa += t.recon_spa.map_or(0.0, |v| tape.scalar(v));
        sums.freq += t.recon_freq.map_or(0.0, |v| tape.scalar(v));
        sums.s += it.s_cons;
        sums.n += 1;
    }
    Ok(sums.mean())
}

/// Distils a student from a frozen teacher on in-memory images.
///
/// Each step builds both masked views of every sample (seeded by epoch and
/// id), scores teacher consistency without gradient, and updates the
/// student, its decoder and the head projections with the batch-mean
/// objective. When `val` is non-empty, validation losses are computed after
/// every epoch on fixed per-sample views.
pub fn run_distillation_on(
    teacher: &Encoder,
    train: &[(String, ImageTensor)],
    val: &[(String, ImageTensor)],
    student_config: &EncoderConfig,
    masking: &MaskingConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("coreset has no samples".into()));
    }
    cfg.validate(student_config)?;
    masking.validate(student_config.patch_size, student_config.image_size)?;
    let checksum_before = teacher.checksum();
    let mut student = Student::new(student_config, teacher.config(), seed)?;
    let patch = student_config.patch_size;

    let val_items = val
        .iter()
        .map(|(id, img)| {
            let (spa, freq) = views(masking, img, patch, seed::derive(seed, &["val-views", id]))?;
            let targets = TeacherTargets::compute(teacher, [&spa.image, &freq.image])?;
            let s_cons = weight(cfg, &targets);
            Ok(ValItem {
                original: img.clone(),
                spa: spa.image,
                freq: freq.image,
                targets,
                s_cons,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut opt_s = AdamW::new(student.encoder.params(), cfg.weight_decay);
    let mut opt_d = AdamW::new(student.decoder.params(), cfg.weight_decay);
    let mut opt_p = AdamW::new(&student.projections, cfg.weight_decay);
    let total_steps = train.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut val_log = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, &["distill-shuffle", &epoch.to_string()])));
        let mut sums = Sums::default();
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let k = 1.0 / batch.len() as f64;
            let (mut gs, mut gd, mut gp) = (Vec::new(), Vec::new(), Vec::new());
            for &i in batch {
                let (id, img) = &train[i];
                let (spa, freq) = views(masking, img, patch, seed::derive(seed, &["distill-views", &epoch.to_string(), id]))?;
                let targets = TeacherTargets::compute(teacher, [&spa.image, &freq.image])?;
                let s_cons = weight(cfg, &targets);
                let mut tape = Tape::new();
                let t = sample_objective(&mut tape, &student, &targets, [&spa.image, &freq.image], img, s_cons, cfg, true)?;
                let total = tape.scalar(t.total);
                if !total.is_finite() {
                    return Err(Error::NonFiniteLoss("loss_total"));
                }
                sums.total += total;
                sums.distill += tape.scalar(t.distill);
                sums.spa += t.recon_spa.map_or(0.0, |v| tape.scalar(v));
                sums.freq += t.recon_freq.map_or(0.0, |v| tape.scalar(v));
                sums.s += s_cons;
                sums.n += 1;
                let grads = tape.backward(t.total);
                accumulate(&mut gs, grads.for_group(STUDENT_GROUP, student.encoder.params().len()), k);
                accumulate(&mut gd, grads.for_group(STUDENT_DECODER_GROUP, student.decoder.params().len()), k);
                accumulate(&mut gp, grads.for_group(PROJECTION_GROUP, student.projections.len()), k);
            }
            lr = cfg.schedule.at(step, total_steps);
            opt_s.step(student.encoder.params_mut(), &gs, lr);
            opt_d.step(student.decoder.params_mut(), &gd, lr);
            opt_p.step(&mut student.projections, &gp, lr);
            step += 1;
        }
        let [total, distill, spa, freq, s] = sums.mean();
        info!("distill epoch {} loss {total:.6} (distill {distill:.6}, spa {spa:.6}, freq {freq:.6}, s_cons {s:.4})", epoch + 1);
        log.push(EpochLog {
            epoch: epoch + 1,
            loss_total: total,
            loss_distill: distill,
            loss_recon_spa: spa,
            loss_recon_freq: freq,
            mean_s_cons: s,
            lr,
        });
        if !val_items.is_empty() {
            let [total, distill, spa, freq, s] = evaluate(&student, &val_items, cfg)?;
            val_log.push(ValLog {
                epoch: epoch + 1,
                loss_total: total,
                loss_distill: distill,
                loss_recon_spa: spa,
                loss_recon_freq: freq,
                mean_s_cons: s,
            });
        }
    }

    let checksum_after = teacher.checksum();
    if checksum_after != checksum_before {
        return Err(Error::Other("teacher weights changed during distillation".into()));
    }
    Ok(DistillOutcome {
        student,
        log,
        val_log,
        teacher_checksum_before: checksum_before,
        teacher_checksum_after: checksum_after,
    })
}

/// Writes any serialisable rows as CSV with a header.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
