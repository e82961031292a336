use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{MaskDomain, MaskSpec, MaskedView};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialMaskSpec {
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl SpatialMaskSpec {
    pub fn new(patch_size: usize, seed: u64) -> Self {
        Self {
            patch_size,
            mask_ratio: 0.75,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "spatial mask ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        Ok(())
    }
}

/// Number of masked patches for `patches` patches at `ratio`.
pub fn masked_patch_count(patches: usize, ratio: f64) -> usize {
    (ratio * patches as f64).round() as usize
}

/// Replaces a seeded uniform choice of `round(ratio·P)` patches by the
/// whole-image mean. Untouched pixels are copied bit for bit.
pub fn spatial_mask(image: &ImageTensor, spec: &SpatialMaskSpec) -> Result<MaskedView> {
    spec.validate()?;
    image.check_patch(spec.patch_size)?;
    let p = spec.patch_size;
    let (gh, gw) = (image.height() / p, image.width() / p);
    let total = gh * gw;
    let m = masked_patch_count(total, spec.mask_ratio);

    let mut rng = seed::rng(spec.seed);
    let chosen = index::sample(&mut rng, total, m);
    let mut mask_map = Array2::from_elem((gh, gw), false);
    for t in chosen.iter() {
        mask_map[[t / gw, t % gw]] = true;
    }

    let fill = image.mean();
    let mut px = image.pixels().clone();
    for ((y, x), v) in px.indexed_iter_mut() {
        if mask_map[[y / p, x / p]] {
            *v = fill;
        }
    }
    Ok(MaskedView {
        image: ImageTensor::from_clipped(px),
        domain: MaskDomain::Spatial,
        mask_map,
        spec: MaskSpec::Spatial(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(h: usize, w: usize, s: u64) -> ImageTensor {
        use rand::Rng;
        let mut rng = seed::rng(s);
        ImageTensor::from_clipped(Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>()))
    }

    #[test]
    fn full_size_geometry_masks_147_of_196() {
        let v = spatial_mask(&noise(224, 224, 0), &SpatialMaskSpec::new(16, 1)).unwrap();
        assert_eq!(v.mask_map.dim(), (14, 14));
        assert_eq!(v.masked_count(), 147);
    }

    #[test]
    fn zero_ratio_is_identity() {
        let img = noise(32, 32, 2);
        let spec = SpatialMaskSpec {
            mask_ratio: 0.0,
            ..SpatialMaskSpec::new(8, 4)
        };
        let v = spatial_mask(&img, &spec).unwrap();
        assert_eq!(v.image, img);
        assert_eq!(v.masked_count(), 0);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = ImageTensor::constant(64, 64, 0.3);
        for ratio in [0.25, 0.75, 1.0] {
            let spec = SpatialMaskSpec {
                mask_ratio: ratio,
                ..SpatialMaskSpec::new(8, 9)
            };
            assert_eq!(spatial_mask(&img, &spec).unwrap().image, img);
        }
    }

    #[test]
    fn non_divisible_dimensions_rejected() {
        assert!(spatial_mask(&noise(30, 32, 0), &SpatialMaskSpec::new(8, 0)).is_err());
    }

    proptest! {
        #[test]
        fn exact_count_and_locality(ri in 0usize..5, seed in 0u64..10_000) {
            let ratio = [0.0, 0.25, 0.5, 0.75, 1.0][ri];
            let img = noise(32, 48, seed);
            let spec = SpatialMaskSpec { mask_ratio: ratio, ..SpatialMaskSpec::new(8, seed) };
            let v = spatial_mask(&img, &spec).unwrap();
            prop_assert_eq!(v.masked_count(), masked_patch_count(24, ratio));
            let mean = img.mean();
            for ((y, x), &o) in v.image.pixels().indexed_iter() {
                if v.mask_map[[y / 8, x / 8]] {
                    prop_assert_eq!(o, mean);
                } else {
                    prop_assert_eq!(o.to_bits(), img.pixels()[[y, x]].to_bits());
                }
            }
        }
    }
}
