use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, DiceCounts, DiceScores};
use super::probe::{pooled_features, LinearProbe};
use super::seg::{mask_labels, tap_features, SegHead};
use super::{require_labels, Sample};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

impl Task {
    pub fn metric(self) -> &'static str {
        match self {
            Task::Classification => "accuracy",
            Task::Segmentation => "dice",
        }
    }
}

/// Metrics of one head on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub task: Task,
    /// Per-class recall (classification) or Dice (segmentation).
    pub per_class: Vec<f64>,
    /// Top-1 accuracy, or mean foreground Dice.
    pub aggregate: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// One CSV row: `task, class, metric, value, n, seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: Task,
    pub class: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

/// Label of the aggregate row.
pub const AGGREGATE_CLASS: &str = "all";

impl EvalResult {
    pub fn rows(&self) -> Vec<MetricRow> {
        let row = |class: String, value: f64| MetricRow {
            task: self.task,
            class,
            metric: self.task.metric().to_string(),
            value,
            n: self.n_samples,
            seed: self.seed,
        };
        let mut rows: Vec<MetricRow> = self
            .per_class
            .iter()
            .enumerate()
            .map(|(c, &v)| row(c.to_string(), v))
            .collect();
        rows.push(row(AGGREGATE_CLASS.to_string(), self.aggregate));
        rows
    }
}

pub fn write_eval_csv(results: &[EvalResult], path: &Path) -> Result<()> {
    let rows: Vec<MetricRow> = results.iter().flat_map(EvalResult::rows).collect();
    crate::distill::write_csv(&rows, path)
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<MetricRow>> {
    crate::distill::read_csv(path)
}

fn nonempty(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split has no samples".into()));
    }
    Ok(())
}

/// Accuracy of a probe over `samples`, with per-class recall (NaN-free:
/// a class absent from the split scores 1 if it is never predicted, else 0).
pub fn evaluate_probe(backbone: &Encoder, probe: &LinearProbe, samples: &[Sample], seed: u64) -> Result<EvalResult> {
    nonempty(samples)?;
    let c = probe.num_classes();
    let labels = require_labels(samples, c)?;
    let preds = probe.predict(&pooled_features(backbone, samples)?);
    let per_class = (0..c)
        .map(|k| {
            let of_k: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            if of_k.is_empty() {
                return if preds.contains(&k) { 0.0 } else { 1.0 };
            }
            of_k.iter().filter(|&&i| preds[i] == k).count() as f64 / of_k.len() as f64
        })
        .collect();
    Ok(EvalResult {
        task: Task::Classification,
        per_class,
        aggregate: accuracy(&preds, &labels)?,
        n_samples: samples.len(),
        seed,
    })
}

/// Dice of a segmentation head over `samples`, counts pooled over the split.
pub fn evaluate_seg(backbone: &Encoder, head: &SegHead, samples: &[Sample], seed: u64) -> Result<EvalResult> {
    nonempty(samples)?;
    let c = head.config().num_classes;
    let mut counts = DiceCounts::new(c);
    for s in samples {
        mask_labels(s, head.image_size(), c)?;
        let pred = head.predict(&tap_features(backbone, s, &head.config().tap_layers)?);
        counts.add(pred.view(), s.mask.as_ref().expect("checked").view())?;
    }
    let d = DiceScores::from_counts(&counts);
    Ok(EvalResult {
        task: Task::Segmentation,
        per_class: d.per_class,
        aggregate: d.mean_foreground,
        n_samples: samples.len(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{train_probe, train_seg, ProbeConfig, SegHeadConfig};
    use crate::data::render_phantom;
    use crate::encoder::EncoderConfig;
    use crate::seed;

    fn enc() -> Encoder {
        Encoder::new(
            EncoderConfig {
                depth: 2,
                dim: 8,
                heads: 2,
                patch_size: 8,
                image_size: (32, 32),
                mlp_ratio: 2,
                mid_layer: 1,
                tap_layers: vec![1, 2],
                use_class_token: false,
            },
            4,
        )
        .unwrap()
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let inc = 1 + i % 3;
                let (image, mask) = render_phantom(inc, 32, 32, &mut seed::rng(100 + i as u64));
                Sample {
                    id: format!("s{i}"),
                    image,
                    label: Some(inc - 1),
                    mask: Some(mask),
                }
            })
            .collect()
    }

    #[test]
    fn probe_evaluation_is_deterministic_and_frozen() {
        let e = enc();
        let data = samples(9);
        let probe_in = data[0].image.clone();
        let before = e.forward(&probe_in, &[1, 2], false).unwrap();
        let out = train_probe(&e, &data, &ProbeConfig::default(), 1).unwrap();
        let after = e.forward(&probe_in, &[1, 2], false).unwrap();
        assert_eq!(before.output, after.output);
        assert!(out.tuned_backbone.is_none());
        let a = evaluate_probe(&e, &out.head, &data, 1).unwrap();
        let b = evaluate_probe(&e, &out.head, &data, 1).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.aggregate));
        assert_eq!(evaluate_probe(&e, &out.head, &data[..1], 1).unwrap().n_samples, 1);
        assert!(evaluate_probe(&e, &out.head, &[], 1).is_err());
        let rows = a.rows();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3].class, "all");
    }

    #[test]
    fn seg_aggregate_is_mean_of_foreground_rows() {
        let e = enc();
        let data = samples(3);
        let head_cfg = SegHeadConfig {
            tap_layers: vec![1, 2],
            neck_dim: 4,
            num_classes: 4,
        };
        let cfg = ProbeConfig {
            num_classes: 4,
            epochs: 1,
            lr0: 1e-2,
            ..ProbeConfig::default()
        };
        let out = train_seg(&e, &data, &head_cfg, &cfg, 2).unwrap();
        let r = evaluate_seg(&e, &out.head, &data, 2).unwrap();
        assert_eq!(r, evaluate_seg(&e, &out.head, &data, 2).unwrap());
        let fg: f64 = r.per_class[1..].iter().sum::<f64>() / 3.0;
        assert!((r.aggregate - fg).abs() < 1e-15);
        assert!(r.per_class.iter().all(|v| (0.0..=1.0).contains(v)));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.csv");
        write_eval_csv(&[r.clone()], &p).unwrap();
        let rows = read_eval_csv(&p).unwrap();
        assert_eq!(rows, r.rows());
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("task,class,metric,value,n,seed\n"));
    }
}
