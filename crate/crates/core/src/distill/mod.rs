//! Consistency-weighted head distillation with mid-layer spatial and
//! frequency reconstruction.

mod losses;
mod student;
mod train;

use serde::{Deserialize, Serialize};

pub use self::losses::{
    consistency_score, cosine_consistency, distill_loss, head_alignment, recon_loss, sample_objective, total_loss,
    DistillBatchState, SampleTerms, TeacherTargets,
};
pub use self::student::{Student, PROJECTION_GROUP, STUDENT_DECODER_GROUP, STUDENT_GROUP};
pub use self::train::{read_csv, run_distillation_on, write_csv, DistillOutcome, EpochLog, ValLog};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::schedule::WarmupPoly;

/// Which masked views feed the reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MimMode {
    None,
    Spatial,
    Frequency,
    Both,
}

impl MimMode {
    pub fn spatial(self) -> bool {
        matches!(self, MimMode::Spatial | MimMode::Both)
    }

    pub fn frequency(self) -> bool {
        matches!(self, MimMode::Frequency | MimMode::Both)
    }

    pub fn tag(self) -> &'static str {
        match self {
            MimMode::None => "no-mim",
            MimMode::Spatial => "s-mim",
            MimMode::Frequency => "f-mim",
            MimMode::Both => "sf-mim",
        }
    }
}

/// Per-sample gate on the head-alignment loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Teacher view consistency `s_cons`.
    Dynamic,
    /// Constant 1.
    Fixed,
}

impl Weighting {
    pub fn tag(self) -> &'static str {
        match self {
            Weighting::Dynamic => "dynamic",
            Weighting::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda_recon: f64,
    /// 1-based student block decoded for reconstruction.
    pub mid_layer: usize,
    pub mim: MimMode,
    pub weighting: Weighting,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: WarmupPoly,
    pub weight_decay: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            mid_layer: 8,
            mim: MimMode::Both,
            weighting: Weighting::Dynamic,
            epochs: 10,
            batch_size: 8,
            schedule: WarmupPoly::default(),
            weight_decay: 0.05,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, student: &EncoderConfig) -> Result<()> {
        if !(self.lambda_recon >= 0.0 && self.lambda_recon.is_finite()) {
            return Err(Error::Config("lambda_recon must be finite and non-negative".into()));
        }
        if !(1..=student.depth).contains(&self.mid_layer) {
            return Err(Error::Config(format!(
                "distill mid_layer {} outside [1, {}]",
                self.mid_layer, student.depth
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("distillation needs at least one epoch and batch size ≥ 1".into()));
        }
        self.schedule.validate()
    }
}

/// Reconstruction layers swept by [`ablation_variants`].
pub const LAYER_SWEEP: [usize; 6] = [2, 4, 6, 8, 10, 12];

/// Ablation grid: every MIM mode under fixed and dynamic weighting
/// (`<mim>_<weighting>`), plus a reconstruction-layer sweep of the base
/// config (`layer-<L>`).
pub fn ablation_variants(base: &DistillConfig) -> Vec<(String, DistillConfig)> {
    let mut out = Vec::new();
    for mim in [MimMode::None, MimMode::Spatial, MimMode::Frequency, MimMode::Both] {
        for weighting in [Weighting::Fixed, Weighting::Dynamic] {
            out.push((
                format!("{}_{}", mim.tag(), weighting.tag()),
                DistillConfig {
                    mim,
                    weighting,
                    ..base.clone()
                },
            ));
        }
    }
    for layer in LAYER_SWEEP {
        out.push((
            format!("layer-{layer:02}"),
            DistillConfig {
                mid_layer: layer,
                ..base.clone()
            },
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_cover_the_grid() {
        let v = ablation_variants(&DistillConfig::default());
        assert_eq!(v.len(), 14);
        let s = v.iter().find(|(n, _)| n == "s-mim_dynamic").unwrap();
        assert!(s.1.mim.spatial() && !s.1.mim.frequency());
        let f = v.iter().find(|(n, _)| n == "sf-mim_fixed").unwrap();
        assert_eq!(f.1.weighting, Weighting::Fixed);
        let layers: Vec<_> = v.iter().filter(|(n, _)| n.starts_with("layer-")).collect();
        assert_eq!(layers.len(), 6);
        for (_, c) in &layers {
            assert_eq!(
                DistillConfig {
                    mid_layer: 8,
                    ..c.clone()
                },
                DistillConfig::default()
            );
        }
    }

    #[test]
    fn validation() {
        let s = EncoderConfig::student_desk();
        DistillConfig::default().validate(&s).unwrap();
        let bad = DistillConfig {
            mid_layer: 13,
            ..DistillConfig::default()
        };
        assert!(bad.validate(&s).is_err());
        let bad = DistillConfig {
            lambda_recon: -1.0,
            ..DistillConfig::default()
        };
        assert!(bad.validate(&s).is_err());
    }
}
