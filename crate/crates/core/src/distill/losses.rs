use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::student::Student;
use super::DistillConfig;
use crate::data::{patchify, ImageTensor};
use crate::encoder::{pool, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Var};

const NORM_GUARD: f64 = 1e-12;

/// `(cos(a, b) + 1) / 2`, or 0.5 when either vector is (numerically) zero.
pub fn cosine_consistency(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na < NORM_GUARD || nb < NORM_GUARD {
        return 0.5;
    }
    let cos = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Teacher outputs for the two masked views of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub pooled: [Array1<f64>; 2],
    pub heads: [Vec<Array2<f64>>; 2],
}

impl TeacherTargets {
    pub fn compute(teacher: &Encoder, views: [&ImageTensor; 2]) -> Result<Self> {
        let a = teacher.forward(views[0], &[], true)?;
        let b = teacher.forward(views[1], &[], true)?;
        Ok(Self {
            pooled: [pool(&a.output), pool(&b.output)],
            heads: [a.heads.expect("heads requested"), b.heads.expect("heads requested")],
        })
    }

    pub fn consistency(&self) -> f64 {
        cosine_consistency(&self.pooled[0], &self.pooled[1])
    }
}

/// Teacher agreement between the spatial and frequency views of one image.
pub fn consistency_score(teacher: &Encoder, view_spa: &ImageTensor, view_freq: &ImageTensor) -> Result<f64> {
    Ok(TeacherTargets::compute(teacher, [view_spa, view_freq])?.consistency())
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let d = a - b;
    d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

/// `(1/H) Σ_h MSE(s_h · P_h, t_h)` for one view.
pub fn head_alignment(student: &[Array2<f64>], teacher: &[Array2<f64>], projections: &ParamStore) -> Result<f64> {
    if student.len() != teacher.len() || projections.len() != teacher.len() {
        return Err(Error::Shape(format!(
            "{} student heads, {} teacher heads, {} projections",
            student.len(),
            teacher.len(),
            projections.len()
        )));
    }
    let mut acc = 0.0;
    for (h, (s, t)) in student.iter().zip(teacher).enumerate() {
        let p = projections.get(h);
        if s.ncols() != p.nrows() || p.ncols() != t.ncols() || s.nrows() != t.nrows() {
            return Err(Error::Shape(format!("head {h}: projection does not connect student and teacher")));
        }
        acc += mse(&s.dot(p), t);
    }
    Ok(acc / teacher.len() as f64)
}

/// Batch mean of `s_cons · (A_spa + A_freq) / 2`, where `A_v` is the head
/// alignment of view `v`.
pub fn distill_loss(
    student_heads: &[[Vec<Array2<f64>>; 2]],
    teacher_heads: &[[Vec<Array2<f64>>; 2]],
    projections: &ParamStore,
    s_cons: &[f64],
) -> Result<f64> {
    if student_heads.len() != teacher_heads.len() || s_cons.len() != teacher_heads.len() || s_cons.is_empty() {
        return Err(Error::Shape("batch sizes of heads and scores disagree".into()));
    }
    let mut acc = 0.0;
    for ((s, t), w) in student_heads.iter().zip(teacher_heads).zip(s_cons) {
        let a = head_alignment(&s[0], &t[0], projections)?;
        let b = head_alignment(&s[1], &t[1], projections)?;
        acc += w * (a + b) / 2.0;
    }
    Ok(acc / s_cons.len() as f64)
}

/// Full-image MSE of the decoded `mid_layer` tokens of each view against the
/// unmasked original.
pub fn recon_loss(
    student: &Encoder,
    decoder: &Decoder,
    mid_layer: usize,
    view_spa: &ImageTensor,
    view_freq: &ImageTensor,
    original: &ImageTensor,
) -> Result<(f64, f64)> {
    let one = |v: &ImageTensor| -> Result<f64> {
        let f = student.forward(v, &[mid_layer], false)?;
        let recon = decoder.decode(&f.taps[0].1)?;
        Ok(mse(&recon, original.pixels()))
    };
    Ok((one(view_spa)?, one(view_freq)?))
}

/// Loss components of one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillBatchState {
    pub s_cons: Vec<f64>,
    pub loss_distill: f64,
    pub loss_recon_spatial: f64,
    pub loss_recon_frequency: f64,
    pub loss_total: f64,
}

/// `L_distill + λ·(L_spa + L_freq)`; any non-finite component is an error
/// naming it.
pub fn total_loss(distill: f64, recon_spatial: f64, recon_frequency: f64, lambda: f64) -> Result<f64> {
    for (name, v) in [
        ("loss_distill", distill),
        ("loss_recon_spatial", recon_spatial),
        ("loss_recon_frequency", recon_frequency),
        ("lambda_recon", lambda),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(distill + lambda * (recon_spatial + recon_frequency))
}

/// Tape handles of one sample's objective.
#[derive(Clone, Copy, Debug)]
pub struct SampleTerms {
    pub total: Var,
    pub distill: Var,
    pub recon_spa: Option<Var>,
    pub recon_freq: Option<Var>,
}

/// Records one sample's distillation objective. `s_cons` enters as a
/// constant; teacher heads are constants. With `trainable = false` the
/// student also enters as constants (evaluation).
pub fn sample_objective<'a>(
    tape: &mut Tape<'a>,
    student: &'a Student,
    targets: &TeacherTargets,
    views: [&ImageTensor; 2],
    original: &ImageTensor,
    s_cons: f64,
    config: &DistillConfig,
    trainable: bool,
) -> Result<SampleTerms> {
    use super::student::{PROJECTION_GROUP, STUDENT_DECODER_GROUP, STUDENT_GROUP};
    let enc = &student.encoder;
    let heads = enc.config().heads;
    if targets.heads[0].len() != heads {
        return Err(Error::Config(format!(
            "teacher has {} heads, student has {heads}",
            targets.heads[0].len()
        )));
    }
    let g = |group: u16| trainable.then_some(group);
    let proj = student.projections.bind(tape, g(PROJECTION_GROUP));
    let target = tape.constant(patchify(original.pixels(), enc.config().patch_size));
    let recon_on = [config.mim.spatial(), config.mim.frequency()];

    let mut align = Vec::with_capacity(2);
    let mut recon = [None, None];
    for (v, view) in views.iter().enumerate() {
        let x = tape.constant(enc.tokenize(view)?);
        let tr = enc.trace(tape, x, g(STUDENT_GROUP));
        let mut sum = None;
        for h in 0..heads {
            let p = tape.matmul(tr.heads[h], proj[h]);
            let t = tape.constant(targets.heads[v][h].clone());
            let l = tape.mse(p, t);
            sum = Some(match sum {
                Some(s) => tape.add(s, l),
                None => l,
            });
        }
        align.push(tape.scale(sum.expect("at least one head"), 1.0 / heads as f64));
        if recon_on[v] {
            let mid = tr.blocks[config.mid_layer - 1];
            let out = student.decoder.trace(tape, mid, g(STUDENT_DECODER_GROUP));
            recon[v] = Some(tape.mse(out, target));
        }
    }
    let both = tape.add(align[0], align[1]);
    let distill = tape.scale(both, s_cons / 2.0);
    let mut total = distill;
    for r in recon.iter().flatten() {
        let w = tape.scale(*r, config.lambda_recon);
        total = tape.add(total, w);
    }
    Ok(SampleTerms {
        total,
        distill,
        recon_spa: recon[0],
        recon_freq: recon[1],
    })
}
