use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a toy vision-transformer encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch_size: usize,
    /// Input `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub mlp_ratio: usize,
    /// 1-based block whose output feeds the reconstruction decoder.
    pub mid_layer: usize,
    /// 1-based blocks tapped by the segmentation head.
    pub tap_layers: Vec<usize>,
    pub use_class_token: bool,
}

impl EncoderConfig {
    /// Desk-scale teacher: 64×64 input, patch 8, width 64.
    pub fn teacher_desk() -> Self {
        Self {
            depth: 12,
            dim: 64,
            heads: 4,
            patch_size: 8,
            image_size: (64, 64),
            mlp_ratio: 4,
            mid_layer: 8,
            tap_layers: vec![3, 5, 7, 11],
            use_class_token: false,
        }
    }

    /// Desk-scale student: same depth and head count, width 32.
    pub fn student_desk() -> Self {
        Self {
            dim: 32,
            ..Self::teacher_desk()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_size.0 / self.patch_size,
            self.image_size.1 / self.patch_size,
        )
    }

    pub fn tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.dim == 0 || self.heads == 0 || self.patch_size == 0 || self.mlp_ratio == 0 {
            return bad("encoder sizes must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % self.patch_size != 0 || w % self.patch_size != 0 {
            return bad(format!("image {h}x{w} not divisible by patch {}", self.patch_size));
        }
        if !(1..=self.depth).contains(&self.mid_layer) {
            return bad(format!("mid_layer {} outside [1, {}]", self.mid_layer, self.depth));
        }
        if let Some(t) = self.tap_layers.iter().find(|t| !(1..=self.depth).contains(*t)) {
            return bad(format!("tap layer {t} outside [1, {}]", self.depth));
        }
        if self.use_class_token {
            return bad("class tokens are not supported; features are mean-pooled".into());
        }
        Ok(())
    }

    /// Teacher/student pairing requirement for head-wise distillation.
    pub fn check_pair(teacher: &Self, student: &Self) -> Result<()> {
        if teacher.heads != student.heads {
            return Err(Error::Config(format!(
                "teacher has {} heads, student has {}",
                teacher.heads, student.heads
            )));
        }
        if teacher.image_size != student.image_size || teacher.patch_size != student.patch_size {
            return Err(Error::Config("teacher and student must share image and patch size".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_are_valid() {
        let t = EncoderConfig::teacher_desk();
        let s = EncoderConfig::student_desk();
        t.validate().unwrap();
        s.validate().unwrap();
        EncoderConfig::check_pair(&t, &s).unwrap();
        assert_eq!(t.tokens(), 64);
        assert_eq!(s.head_dim(), 8);
    }

    #[test]
    fn invalid_configs() {
        let mut c = EncoderConfig::student_desk();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::student_desk();
        c.mid_layer = 13;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::student_desk();
        c.tap_layers = vec![0];
        assert!(c.validate().is_err());
        let mut s = EncoderConfig::student_desk();
        s.heads = 8;
        assert!(EncoderConfig::check_pair(&EncoderConfig::teacher_desk(), &s).is_err());
    }
}
