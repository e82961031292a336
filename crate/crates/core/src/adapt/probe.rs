use log::info;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde_json::json;

use super::{
    argmax_rows, require_labels, with_augmented_copies, AdaptLog, AdaptOutcome, ProbeConfig, Sample, BACKBONE_GROUP,
};
use crate::data::AugmentationPolicy;
use crate::encoder::{Checkpoint, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{accumulate, AdamW, ParamStore, Tape, Var};
use crate::seed;

pub const PROBE_GROUP: u16 = 1;

const STD_FLOOR: f64 = 1e-6;

/// Standardisation followed by one linear layer over pooled final-layer
/// features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    /// `[probe.weight (d×C), probe.bias (1×C)]`.
    params: ParamStore,
    /// `[probe.shift (1×d) = −mean, probe.scale (1×d) = 1/std]`, fixed.
    norm: ParamStore,
    scale_diag: Array2<f64>,
}

impl LinearProbe {
    /// Zero-initialised probe; standardisation statistics come from
    /// `features` (rows = samples).
    pub fn new(features: &Array2<f64>, num_classes: usize) -> Self {
        let d = features.ncols();
        let mean = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
        let std = features.std_axis(Axis(0), 0.0).mapv(|s| s.max(STD_FLOOR));
        let mut norm = ParamStore::new();
        norm.push("probe.shift", (-mean).insert_axis(Axis(0)));
        norm.push("probe.scale", std.mapv(|s| 1.0 / s).insert_axis(Axis(0)));
        let mut params = ParamStore::new();
        params.push_const("probe.weight", (d, num_classes), 0.0);
        params.push_const("probe.bias", (1, num_classes), 0.0);
        Self::from_parts(params, norm).expect("consistent shapes")
    }

    pub fn from_parts(params: ParamStore, norm: ParamStore) -> Result<Self> {
        if params.len() != 2 || norm.len() != 2 {
            return Err(Error::Shape("probe expects weight, bias, shift and scale tensors".into()));
        }
        let d = params.get(0).nrows();
        if params.get(1).dim() != (1, params.get(0).ncols()) || norm.get(0).dim() != (1, d) || norm.get(1).dim() != (1, d)
        {
            return Err(Error::Shape("probe tensors disagree on feature or class count".into()));
        }
        let scale_diag = Array2::from_diag(&norm.get(1).row(0));
        Ok(Self {
            params,
            norm,
            scale_diag,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.params.get(0).ncols()
    }

    pub fn dim(&self) -> usize {
        self.params.get(0).nrows()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Records logits for pooled features `x` (rows = samples).
    pub fn trace<'a>(&'a self, tape: &mut Tape<'a>, x: Var, group: Option<u16>) -> Var {
        let p = self.params.bind(tape, group);
        let shift = tape.constant_ref(self.norm.get(0));
        let scale = tape.constant_ref(&self.scale_diag);
        let z = tape.add_row(x, shift);
        let z = tape.matmul(z, scale);
        let z = tape.matmul(z, p[0]);
        tape.add_row(z, p[1])
    }

    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        let z = (features + self.norm.get(0)) * self.norm.get(1);
        z.dot(self.params.get(0)) + self.params.get(1)
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        argmax_rows(&self.logits(features))
    }

    pub fn to_checkpoint(&self, backbone: &EncoderConfig) -> Checkpoint {
        let mut c = Checkpoint::new(backbone.clone())
            .with_section("probe", self.params.clone())
            .with_section("probe_norm", self.norm.clone());
        c.meta = json!({ "head": "probe" });
        c
    }

    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<Self> {
        let params = ckpt.take_section("probe")?;
        let norm = ckpt.take_section("probe_norm")?;
        Self::from_parts(params, norm)
    }
}

fn check_classes(labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("no training samples for the probe".into()));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Config(format!("train split has a single class ({})", labels[0])));
    }
    Ok(())
}

/// Trains a probe on precomputed pooled features (frozen backbone).
pub fn train_probe_on_features(
    features: &Array2<f64>,
    labels: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(LinearProbe, Vec<AdaptLog>)> {
    cfg.validate()?;
    check_classes(labels)?;
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows for {} labels", features.nrows(), labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= cfg.num_classes) {
        return Err(Error::Config(format!("label {l} but num_classes = {}", cfg.num_classes)));
    }
    let mut probe = LinearProbe::new(features, cfg.num_classes);
    let mut opt = AdamW::new(&probe.params, cfg.weight_decay);
    let n = labels.len();
    let total = cfg.total_steps(n);
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, &["probe-shuffle", &epoch.to_string()])));
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let xb = features.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(xb);
            let logits = probe.trace(&mut tape, x, Some(PROBE_GROUP));
            let loss = tape.cross_entropy(logits, &yb);
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss("probe cross-entropy"));
            }
            loss_sum += l * batch.len() as f64;
            hits += argmax_rows(tape.value(logits)).iter().zip(&yb).filter(|(p, y)| p == y).count();
            let grads = tape.backward(loss).for_group(PROBE_GROUP, probe.params.len());
            lr = cfg.lr(step, total)?;
            opt.step(&mut probe.params, &grads, lr);
            step += 1;
        }
        log.push(AdaptLog {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_metric: hits as f64 / n as f64,
            lr,
        });
    }
    if let Some(last) = log.last() {
        info!("probe: final loss {:.4}, train accuracy {:.3}", last.loss, last.train_metric);
    }
    Ok((probe, log))
}

/// Pooled final-layer features of each sample, one row per sample.
pub(crate) fn pooled_features(backbone: &Encoder, samples: &[Sample]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((samples.len(), backbone.config().dim));
    for (mut row, s) in out.rows_mut().into_iter().zip(samples) {
        row.assign(&backbone.embed(&s.image)?);
    }
    Ok(out)
}

/// Trains a linear probe on a backbone's pooled features. With
/// `freeze_backbone` the backbone is untouched and features are computed
/// once; otherwise backbone and probe are optimised jointly.
pub fn train_probe(backbone: &Encoder, samples: &[Sample], cfg: &ProbeConfig, seed: u64) -> Result<AdaptOutcome<LinearProbe>> {
    cfg.validate()?;
    let policy = AugmentationPolicy::classification(seed::derive(seed, &["probe-augment"]));
    let samples = &with_augmented_copies(samples, cfg.augment_copies, &policy)[..];
    let labels = require_labels(samples, cfg.num_classes)?;
    check_classes(&labels)?;
    let features = pooled_features(backbone, samples)?;
    if cfg.freeze_backbone {
        let (head, log) = train_probe_on_features(&features, &labels, cfg, seed)?;
        return Ok(AdaptOutcome {
            head,
            tuned_backbone: None,
            log,
        });
    }

    let mut encoder = backbone.clone();
    let mut probe = LinearProbe::new(&features, cfg.num_classes);
    let mut opt_p = AdamW::new(&probe.params, cfg.weight_decay);
    let mut opt_e = AdamW::new(encoder.params(), cfg.weight_decay);
    let n = samples.len();
    let total = cfg.total_steps(n);
    let mut step = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive(seed, &["probe-shuffle", &epoch.to_string()])));
        let (mut loss_sum, mut hits, mut lr) = (0.0, 0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let k = 1.0 / batch.len() as f64;
            let (mut gp, mut ge) = (Vec::new(), Vec::new());
            for &i in batch {
                let mut tape = Tape::new();
                let x = tape.constant(encoder.tokenize(&samples[i].image)?);
                let tr = encoder.trace(&mut tape, x, Some(BACKBONE_GROUP));
                let pooled = tape.mean_rows(tr.output);
                let logits = probe.trace(&mut tape, pooled, Some(PROBE_GROUP));
                let loss = tape.cross_entropy(logits, &[labels[i]]);
                let l = tape.scalar(loss);
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss("probe cross-entropy"));
                }
                loss_sum += l;
                hits += (argmax_rows(tape.value(logits))[0] == labels[i]) as usize;
                let g = tape.backward(loss);
                accumulate(&mut gp, g.for_group(PROBE_GROUP, probe.params.len()), k);
                accumulate(&mut ge, g.for_group(BACKBONE_GROUP, encoder.params().len()), k);
            }
            lr = cfg.lr(step, total)?;
            opt_p.step(&mut probe.params, &gp, lr);
            opt_e.step(encoder.params_mut(), &ge, lr);
            step += 1;
        }
        log.push(AdaptLog {
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            train_metric: hits as f64 / n as f64,
            lr,
        });
    }
    Ok(AdaptOutcome {
        head: probe,
        tuned_backbone: Some(encoder),
        log,
    })
}
