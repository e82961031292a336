//! Domain-separated masking: mean-fill patch masking in the spatial domain
//! and phase-preserving band-stop masking in the frequency domain.

mod bands;
pub mod fft;
mod frequency;
mod spatial;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use self::bands::{
    band_partition, centered_index, normalized_radius, offset, partner, unshifted_index, BandMap, PRESERVED,
};
pub use self::frequency::{
    default_center_preserve, eligible_bins, frequency_mask, frequency_mask_detailed, target_masked_bins,
    FrequencyMaskSpec, FrequencyOutcome,
};
pub use self::spatial::{masked_patch_count, spatial_mask, SpatialMaskSpec};
use crate::data::ImageTensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskDomain {
    Spatial,
    Frequency,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSpec {
    Spatial(SpatialMaskSpec),
    Frequency(FrequencyMaskSpec),
}

/// A masked copy of an image. `mask_map` is per patch for spatial views and
/// per centred frequency bin for frequency views.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedView {
    pub image: ImageTensor,
    pub domain: MaskDomain,
    pub mask_map: Array2<bool>,
    pub spec: MaskSpec,
}

impl MaskedView {
    pub fn masked_count(&self) -> usize {
        self.mask_map.iter().filter(|m| **m).count()
    }

    /// Writes the mask map as a black/white PNG; spatial maps are upsampled
    /// to one pixel per image pixel.
    pub fn save_mask_png(&self, path: &Path) -> Result<()> {
        let (mh, mw) = self.mask_map.dim();
        let (h, w) = (self.image.height(), self.image.width());
        let (sy, sx) = (h / mh, w / mw);
        let px = Array2::from_shape_fn((mh * sy, mw * sx), |(y, x)| {
            if self.mask_map[[y / sy, x / sx]] {
                1.0
            } else {
                0.0
            }
        });
        ImageTensor::from_clipped(px).save_png(path)
    }
}

/// Masking hyper-parameters shared by teacher pretraining and distillation.
/// Seeds are supplied per image at use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    pub spatial_ratio: f64,
    pub num_bands: usize,
    pub bands_per_mask: usize,
    pub frequency_ratio: f64,
    /// Defaults to the size-scaled 10×10 rule when absent.
    pub center_preserve: Option<(usize, usize)>,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            spatial_ratio: 0.75,
            num_bands: 7,
            bands_per_mask: 2,
            frequency_ratio: 0.4,
            center_preserve: None,
        }
    }
}

impl MaskingConfig {
    pub fn specs(&self, patch_size: usize, image_size: (usize, usize), seed: u64) -> (SpatialMaskSpec, FrequencyMaskSpec) {
        let (h, w) = image_size;
        (
            SpatialMaskSpec {
                patch_size,
                mask_ratio: self.spatial_ratio,
                seed,
            },
            FrequencyMaskSpec {
                num_bands: self.num_bands,
                bands_per_mask: self.bands_per_mask,
                mask_ratio: self.frequency_ratio,
                center_preserve: self.center_preserve.unwrap_or_else(|| default_center_preserve(h, w)),
                seed,
            },
        )
    }

    pub fn validate(&self, patch_size: usize, image_size: (usize, usize)) -> Result<()> {
        let (s, f) = self.specs(patch_size, image_size, 0);
        s.validate()?;
        f.validate()?;
        let (ph, pw) = f.center_preserve;
        if ph >= image_size.0 || pw >= image_size.1 {
            return Err(Error::Config(format!(
                "center_preserve {ph}x{pw} must be smaller than the {}x{} spectrum",
                image_size.0, image_size.1
            )));
        }
        Ok(())
    }

    /// Both views of `image` under a per-image seed.
    pub fn view_pair(&self, image: &ImageTensor, patch_size: usize, seed: u64) -> Result<(MaskedView, MaskedView)> {
        let (s, f) = self.specs(patch_size, (image.height(), image.width()), seed);
        make_view_pair(image, &s, &f)
    }
}

/// Builds the spatial and frequency views of one image. Each view's
/// randomness is derived from its spec's seed and a domain tag.
pub fn make_view_pair(
    image: &ImageTensor,
    sspec: &SpatialMaskSpec,
    fspec: &FrequencyMaskSpec,
) -> Result<(MaskedView, MaskedView)> {
    let s = SpatialMaskSpec {
        seed: seed::derive(sspec.seed, &["spatial"]),
        ..sspec.clone()
    };
    let f = FrequencyMaskSpec {
        seed: seed::derive(fspec.seed, &["frequency"]),
        ..fspec.clone()
    };
    let spa = spatial_mask(image, &s)?;
    let freq = frequency_mask(image, &f)?;
    if spa.image.height() != freq.image.height() || spa.image.width() != freq.image.width() {
        return Err(Error::Shape("view shapes disagree".into()));
    }
    Ok((spa, freq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::render_phantom;

    #[test]
    fn zero_ratios_give_input_back() {
        let (img, _) = render_phantom(2, 32, 32, &mut seed::rng(0));
        let s = SpatialMaskSpec {
            mask_ratio: 0.0,
            ..SpatialMaskSpec::new(8, 1)
        };
        let f = FrequencyMaskSpec {
            bands_per_mask: 0,
            mask_ratio: 0.0,
            ..FrequencyMaskSpec::for_size(32, 32, 1)
        };
        let (a, b) = make_view_pair(&img, &s, &f).unwrap();
        assert_eq!(a.image, img);
        for (x, y) in b.image.pixels().iter().zip(img.pixels()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn same_seeds_same_pair() {
        let (img, _) = render_phantom(1, 64, 64, &mut seed::rng(3));
        let s = SpatialMaskSpec::new(8, 42);
        let f = FrequencyMaskSpec::for_size(64, 64, 42);
        assert_eq!(make_view_pair(&img, &s, &f).unwrap(), make_view_pair(&img, &s, &f).unwrap());
    }

    #[test]
    fn default_phantom_pair_masks_48_of_64_patches() {
        let (img, _) = render_phantom(2, 64, 64, &mut seed::rng(5));
        let (spa, freq) = make_view_pair(
            &img,
            &SpatialMaskSpec::new(8, 7),
            &FrequencyMaskSpec::for_size(64, 64, 7),
        )
        .unwrap();
        assert_eq!(spa.masked_count(), 48);
        assert_eq!(freq.masked_count(), target_masked_bins(64, 64, &FrequencyMaskSpec::for_size(64, 64, 0)));
    }

    #[test]
    fn masking_config_validation() {
        let c = MaskingConfig::default();
        c.validate(8, (64, 64)).unwrap();
        let bad = MaskingConfig {
            frequency_ratio: 1.0,
            ..MaskingConfig::default()
        };
        assert!(bad.validate(8, (64, 64)).is_err());
        let bad = MaskingConfig {
            center_preserve: Some((64, 3)),
            ..MaskingConfig::default()
        };
        assert!(bad.validate(8, (64, 64)).is_err());
        let (img, _) = render_phantom(1, 32, 32, &mut seed::rng(2));
        let (s, _) = c.view_pair(&img, 8, 4).unwrap();
        assert_eq!(s.masked_count(), 12);
    }

    #[test]
    fn mask_png_export() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = render_phantom(1, 32, 32, &mut seed::rng(5));
        let (spa, freq) = make_view_pair(
            &img,
            &SpatialMaskSpec::new(8, 7),
            &FrequencyMaskSpec::for_size(32, 32, 7),
        )
        .unwrap();
        spa.save_mask_png(&dir.path().join("s.png")).unwrap();
        freq.save_mask_png(&dir.path().join("f.png")).unwrap();
        let m = crate::data::load_mask(&dir.path().join("s.png")).unwrap();
        assert_eq!(m.dim(), (32, 32));
    }
}
