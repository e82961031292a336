use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{ImageTensor, LabelMap};
use crate::error::{Error, Result};
use crate::seed;

/// Random geometric and photometric augmentation. Contrast and gamma are
/// only set for segmentation policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub flip_horizontal: f64,
    pub rotate_degrees: f64,
    pub scale_range: (f64, f64),
    pub contrast_range: Option<(f64, f64)>,
    pub gamma_range: Option<(f64, f64)>,
    pub seed: u64,
}

impl AugmentationPolicy {
    pub fn classification(seed: u64) -> Self {
        Self {
            flip_horizontal: 0.5,
            rotate_degrees: 15.0,
            scale_range: (0.9, 1.1),
            contrast_range: None,
            gamma_range: None,
            seed,
        }
    }

    pub fn segmentation(seed: u64) -> Self {
        Self {
            contrast_range: Some((0.8, 1.2)),
            gamma_range: Some((0.8, 1.2)),
            ..Self::classification(seed)
        }
    }

    pub fn identity() -> Self {
        Self {
            flip_horizontal: 0.0,
            rotate_degrees: 0.0,
            scale_range: (1.0, 1.0),
            contrast_range: None,
            gamma_range: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if !(0.0..=1.0).contains(&self.flip_horizontal) {
            return Err(Error::Config("flip probability must lie in [0, 1]".into()));
        }
        if !(self.rotate_degrees >= 0.0) {
            return Err(Error::Config("rotation range must be non-negative".into()));
        }
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 {
            return Err(Error::Config("scale range must be positive and ordered".into()));
        }
        for r in [self.contrast_range, self.gamma_range].into_iter().flatten() {
            if !ordered(r) || r.0 <= 0.0 {
                return Err(Error::Config("photometric range must be positive and ordered".into()));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    // One draw regardless of range width keeps the stream aligned.
    let u: f64 = rng.gen();
    range.0 + u * (range.1 - range.0)
}

/// Applies one random draw of `policy` to an image and, optionally, its
/// label map. Both receive the same geometric transform; the label map is
/// resampled nearest-neighbour and photometric changes touch the image only.
pub fn augment(
    image: &ImageTensor,
    mask: Option<&LabelMap>,
    policy: &AugmentationPolicy,
    sample_seed: u64,
) -> (ImageTensor, Option<LabelMap>) {
    let mut rng = seed::rng(seed::derive(policy.seed, &["augment", &sample_seed.to_string()]));
    let flip = rng.gen::<f64>() < policy.flip_horizontal;
    let angle = (draw(&mut rng, (-1.0, 1.0)) * policy.rotate_degrees).to_radians();
    let scale = draw(&mut rng, policy.scale_range);
    let contrast = draw(&mut rng, policy.contrast_range.unwrap_or((1.0, 1.0)));
    let gamma = draw(&mut rng, policy.gamma_range.unwrap_or((1.0, 1.0)));

    let geometric = flip || angle != 0.0 || scale != 1.0;
    let (mut px, out_mask) = if geometric {
        let map = InverseMap::new(image.height(), image.width(), flip, angle, scale);
        (
            map.resample_bilinear(image.pixels()),
            mask.map(|m| map.resample_nearest(m)),
        )
    } else {
        (image.pixels().clone(), mask.cloned())
    };

    if contrast != 1.0 {
        let mean = ImageTensor::from_clipped(px.clone()).mean();
        px.mapv_inplace(|v| (v - mean) * contrast + mean);
    }
    if gamma != 1.0 {
        px.mapv_inplace(|v| v.clamp(0.0, 1.0).powf(gamma));
    }
    (ImageTensor::from_clipped(px), out_mask)
}

/// Output pixel → source coordinate for flip ∘ rotate ∘ scale about the
/// image centre.
pub struct InverseMap {
    h: usize,
    w: usize,
    cy: f64,
    cx: f64,
    flip: bool,
    cos: f64,
    sin: f64,
    scale: f64,
}

impl InverseMap {
    pub fn new(h: usize, w: usize, flip: bool, angle: f64, scale: f64) -> Self {
        Self {
            h,
            w,
            cy: (h as f64 - 1.0) / 2.0,
            cx: (w as f64 - 1.0) / 2.0,
            flip,
            cos: angle.cos(),
            sin: angle.sin(),
            scale,
        }
    }

    pub fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let mut u = x as f64 - self.cx;
        let v = y as f64 - self.cy;
        if self.flip {
            u = -u;
        }
        let su = (self.cos * u + self.sin * v) / self.scale;
        let sv = (-self.sin * u + self.cos * v) / self.scale;
        (sv + self.cy, su + self.cx)
    }

    pub fn resample_bilinear(&self, src: &Array2<f64>) -> Array2<f64> {
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
                0.0
            } else {
                src[[y as usize, x as usize]]
            }
        };
        Array2::from_shape_fn((self.h, self.w), |(y, x)| {
            let (sy, sx) = self.source(y, x);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let mut v = at(y0, x0) * (1.0 - fy) * (1.0 - fx);
            if fx != 0.0 {
                v += at(y0, x0 + 1) * (1.0 - fy) * fx;
            }
            if fy != 0.0 {
                v += at(y0 + 1, x0) * fy * (1.0 - fx);
                if fx != 0.0 {
                    v += at(y0 + 1, x0 + 1) * fy * fx;
                }
            }
            v
        })
    }

    pub fn nearest(&self, y: usize, x: usize) -> Option<(usize, usize)> {
        let (sy, sx) = self.source(y, x);
        let (ry, rx) = (sy.round(), sx.round());
        if ry < 0.0 || rx < 0.0 || ry >= self.h as f64 || rx >= self.w as f64 {
            None
        } else {
            Some((ry as usize, rx as usize))
        }
    }

    pub fn resample_nearest(&self, src: &LabelMap) -> LabelMap {
        Array2::from_shape_fn((self.h, self.w), |(y, x)| {
            self.nearest(y, x).map_or(0, |(sy, sx)| src[[sy, sx]])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_clipped(Array2::from_shape_fn((h, w), |(y, x)| {
            ((y * w + x) % 97) as f64 / 96.0
        }))
    }

    #[test]
    fn degenerate_policy_is_identity() {
        let img = ramp(16, 16);
        let mask = LabelMap::from_shape_fn((16, 16), |(y, _)| (y / 4) as u8);
        let (out, m) = augment(&img, Some(&mask), &AugmentationPolicy::identity(), 9);
        assert_eq!(out, img);
        assert_eq!(m.unwrap(), mask);
    }

    #[test]
    fn double_flip_recovers_original() {
        let img = ramp(16, 12);
        let policy = AugmentationPolicy {
            flip_horizontal: 1.0,
            ..AugmentationPolicy::identity()
        };
        let (once, _) = augment(&img, None, &policy, 3);
        assert_ne!(once, img);
        let (twice, _) = augment(&once, None, &policy, 3);
        assert_eq!(twice, img);
    }

    #[test]
    fn gamma_two_squares_constant() {
        let img = ImageTensor::constant(8, 8, 0.5);
        let policy = AugmentationPolicy {
            gamma_range: Some((2.0, 2.0)),
            ..AugmentationPolicy::identity()
        };
        let (out, _) = augment(&img, None, &policy, 0);
        assert!(out.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn photometric_leaves_mask_alone() {
        let img = ramp(8, 8);
        let mask = LabelMap::from_elem((8, 8), 2);
        let policy = AugmentationPolicy {
            contrast_range: Some((1.5, 1.5)),
            gamma_range: Some((0.5, 0.5)),
            ..AugmentationPolicy::identity()
        };
        let (_, m) = augment(&img, Some(&mask), &policy, 0);
        assert_eq!(m.unwrap(), mask);
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut p = AugmentationPolicy::segmentation(0);
        assert!(p.validate().is_ok());
        p.scale_range = (1.2, 0.8);
        assert!(p.validate().is_err());
        p = AugmentationPolicy::classification(0);
        p.flip_horizontal = 1.5;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn mask_labels_follow_the_geometric_map(seed in 0u64..500, flip in 0.0f64..1.0) {
            let (h, w) = (24, 20);
            let img = ramp(h, w);
            let mask = LabelMap::from_shape_fn((h, w), |(y, x)| ((y / 5 + x / 7) % 4) as u8);
            let policy = AugmentationPolicy { flip_horizontal: flip, ..AugmentationPolicy::segmentation(seed) };
            let (_, out) = augment(&img, Some(&mask), &policy, seed);
            let out = out.unwrap();
            // Rebuild the same draw and check each output label against its source.
            let mut rng = seed::rng(seed::derive(policy.seed, &["augment", &seed.to_string()]));
            let f = rand::Rng::gen::<f64>(&mut rng) < policy.flip_horizontal;
            let a = (draw(&mut rng, (-1.0, 1.0)) * policy.rotate_degrees).to_radians();
            let s = draw(&mut rng, policy.scale_range);
            let map = InverseMap::new(h, w, f, a, s);
            for y in 0..h {
                for x in 0..w {
                    let expect = map.nearest(y, x).map_or(0, |(sy, sx)| mask[[sy, sx]]);
                    prop_assert_eq!(out[[y, x]], expect);
                }
            }
        }
    }
}
