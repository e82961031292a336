//! Downstream adaptation: a linear classification probe and an FPN-style
//! segmentation head on encoder features, with accuracy and Dice
//! evaluation.

mod eval;
mod metrics;
mod probe;
mod seg;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use self::eval::{
    evaluate_probe, evaluate_seg, read_eval_csv, write_eval_csv, EvalResult, MetricRow, Task, AGGREGATE_CLASS,
};
pub use self::metrics::{accuracy, dice, DiceCounts, DiceScores};
pub use self::probe::{train_probe, train_probe_on_features, LinearProbe, PROBE_GROUP};
pub use self::seg::{bilinear_matrix, resize_matrix_2d, train_seg, SegHead, SEG_GROUP};
pub use crate::schedule::{lr_schedule, WarmupPoly};
use crate::data::{augment, load_image, load_mask, AugmentationPolicy, ImageTensor, LabelMap, Manifest};
use crate::seed;
use crate::encoder::Encoder;
use crate::error::{Error, Result};

/// Parameter group of the backbone when it is fine-tuned.
pub const BACKBONE_GROUP: u16 = 0;

pub const MAX_AUGMENT_COPIES: usize = 16;

/// Optimisation settings shared by the probe and the segmentation head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub num_classes: usize,
    pub freeze_backbone: bool,
    pub lr0: f64,
    pub epochs: usize,
    /// Warmup length in steps; `None` uses 5% of the total.
    pub warmup_steps: Option<usize>,
    pub poly_power: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Randomly augmented copies of each training sample added to the
    /// training set (evaluation never augments).
    pub augment_copies: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            freeze_backbone: true,
            lr0: 1e-4,
            epochs: 40,
            warmup_steps: None,
            poly_power: 0.9,
            batch_size: 16,
            weight_decay: 0.0,
            augment_copies: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("adaptation needs at least one epoch and batch size ≥ 1".into()));
        }
        if !(self.poly_power > 0.0) {
            return Err(Error::Config("poly_power must be positive".into()));
        }
        if self.augment_copies > MAX_AUGMENT_COPIES {
            return Err(Error::Config(format!("augment_copies must be at most {MAX_AUGMENT_COPIES}")));
        }
        Ok(())
    }

    pub fn total_steps(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size) * self.epochs
    }

    pub fn lr(&self, step: usize, total: usize) -> Result<f64> {
        let warmup = self.warmup_steps.unwrap_or((0.05 * total as f64).floor() as usize);
        lr_schedule(step, total, warmup, self.lr0, self.poly_power)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegHeadConfig {
    /// 1-based encoder blocks feeding the pyramid, shallow to deep.
    pub tap_layers: Vec<usize>,
    pub neck_dim: usize,
    /// Classes including background (label 0).
    pub num_classes: usize,
}

impl Default for SegHeadConfig {
    fn default() -> Self {
        Self {
            tap_layers: vec![3, 5, 7, 11],
            neck_dim: 32,
            num_classes: 4,
        }
    }
}

impl SegHeadConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.tap_layers.is_empty() {
            return Err(Error::Config("segmentation head needs at least one tap layer".into()));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tap_layers must be strictly increasing".into()));
        }
        if let Some(t) = self.tap_layers.iter().find(|t| !(1..=depth).contains(*t)) {
            return Err(Error::Config(format!("tap layer {t} outside [1, {depth}]")));
        }
        if self.neck_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config("neck_dim ≥ 1 and num_classes ≥ 2 are required".into()));
        }
        Ok(())
    }
}

/// Settings for both downstream tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub classification: ProbeConfig,
    pub segmentation: ProbeConfig,
    pub seg_head: SegHeadConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            classification: ProbeConfig::default(),
            segmentation: ProbeConfig {
                num_classes: 4,
                lr0: 1e-3,
                batch_size: 8,
                ..ProbeConfig::default()
            },
            seg_head: SegHeadConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        self.classification.validate()?;
        self.segmentation.validate()?;
        self.seg_head.validate(depth)?;
        if self.segmentation.num_classes != self.seg_head.num_classes {
            return Err(Error::Config(format!(
                "segmentation.num_classes = {} but seg_head.num_classes = {}",
                self.segmentation.num_classes, self.seg_head.num_classes
            )));
        }
        Ok(())
    }
}

/// One image with its optional class label and segmentation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub label: Option<usize>,
    pub mask: Option<LabelMap>,
}

/// One row of an adaptation training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptLog {
    pub epoch: usize,
    pub loss: f64,
    /// Running accuracy (probe) or pixel accuracy (segmentation) over the epoch.
    pub train_metric: f64,
    pub lr: f64,
}

/// A trained head, the fine-tuned backbone when it was not frozen, and the log.
#[derive(Clone, Debug)]
pub struct AdaptOutcome<H> {
    pub head: H,
    pub tuned_backbone: Option<Encoder>,
    pub log: Vec<AdaptLog>,
}

impl<H> AdaptOutcome<H> {
    /// The backbone to evaluate with: the tuned one if any, else `frozen`.
    pub fn backbone<'a>(&'a self, frozen: &'a Encoder) -> &'a Encoder {
        self.tuned_backbone.as_ref().unwrap_or(frozen)
    }
}

/// Nearest-neighbour resize of a label map.
pub fn resize_mask(mask: &LabelMap, size: (usize, usize)) -> LabelMap {
    let (h, w) = mask.dim();
    if (h, w) == size {
        return mask.clone();
    }
    Array2::from_shape_fn(size, |(y, x)| {
        let sy = ((y as f64 + 0.5) * h as f64 / size.0 as f64).floor() as usize;
        let sx = ((x as f64 + 0.5) * w as f64 / size.1 as f64).floor() as usize;
        mask[[sy.min(h - 1), sx.min(w - 1)]]
    })
}

/// Loads images (resized to `size`), labels and, when `with_masks`, masks
/// resized to the same grid. A mask whose native size differs from its
/// image's is an error.
pub fn load_samples(manifest: &Manifest, size: (usize, usize), with_masks: bool) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let path = manifest.resolve(&r.path);
            let image = load_image(&path, size)?;
            let label = match r.label {
                Some(l) if l < 0 => return Err(Error::Config(format!("sample {:?} has negative label {l}", r.id))),
                l => l.map(|l| l as usize),
            };
            let mask = if with_masks {
                let mp = r.mask_path.as_ref().ok_or_else(|| Error::Config(format!("sample {:?} has no mask", r.id)))?;
                let m = load_mask(&manifest.resolve(mp))?;
                let native = image::image_dimensions(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                if (native.1 as usize, native.0 as usize) != m.dim() {
                    return Err(Error::Shape(format!(
                        "sample {:?}: mask {:?} does not match image {}x{}",
                        r.id,
                        m.dim(),
                        native.1,
                        native.0
                    )));
                }
                Some(resize_mask(&m, size))
            } else {
                None
            };
            Ok(Sample {
                id: r.id.clone(),
                image,
                label,
                mask,
            })
        })
        .collect()
}

/// The samples followed by `copies` augmented versions of each (ids
/// suffixed `#aug<k>`). Each copy's draw depends only on the policy seed,
/// the sample id and `k`, so the result is independent of sample order.
pub fn with_augmented_copies(samples: &[Sample], copies: usize, policy: &AugmentationPolicy) -> Vec<Sample> {
    let mut out = samples.to_vec();
    for k in 1..=copies {
        for s in samples {
            let (image, mask) = augment(&s.image, s.mask.as_ref(), policy, seed::derive(0, &[&s.id, &k.to_string()]));
            out.push(Sample {
                id: format!("{}#aug{k}", s.id),
                image,
                label: s.label,
                mask,
            });
        }
    }
    out
}

pub(crate) fn require_labels(samples: &[Sample], num_classes: usize) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| match s.label {
            None => Err(Error::MissingLabel(s.id.clone())),
            Some(l) if l >= num_classes => Err(Error::Config(format!(
                "sample {:?} has label {l} but num_classes = {num_classes}",
                s.id
            ))),
            Some(l) => Ok(l),
        })
        .collect()
}

pub(crate) fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
