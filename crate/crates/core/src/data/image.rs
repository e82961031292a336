use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Integer label map, one class index per pixel.
pub type LabelMap = Array2<u8>;

/// Grayscale image with values in `[0, 1]`, stored row-major as `H×W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pixels: Array2<f64>,
}

impl ImageTensor {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Shape("image has zero size".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Shape(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps into `[0, 1]`; non-finite values become 0.
    pub fn from_clipped(mut pixels: Array2<f64>) -> Self {
        pixels.mapv_inplace(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self { pixels }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::from_clipped(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    /// Whole-image mean, kept inside `[min, max]` so constant images map
    /// to their exact value.
    pub fn mean(&self) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in self.pixels.iter() {
            // Neumaier summation
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        ((sum + comp) / self.pixels.len() as f64).clamp(lo, hi)
    }

    pub fn check_patch(&self, patch: usize) -> Result<()> {
        if patch == 0 || self.height() % patch != 0 || self.width() % patch != 0 {
            return Err(Error::Shape(format!(
                "{}x{} image is not divisible by patch size {patch}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height() as u32, self.width() as u32);
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |x, y| {
            Luma([(self.pixels[[y as usize, x as usize]] * 255.0).round() as u8])
        });
        buf.save(path).map_err(|e| Error::Image {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

/// Decodes a PNG (8/16-bit gray or RGB, converted to luminance), resizes it
/// bilinearly to `size` and scales values into `[0, 1]`.
pub fn load_image(path: &Path, size: (usize, usize)) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let mut luma = img.to_luma32f();
    let (h, w) = size;
    if luma.width() as usize != w || luma.height() as usize != h {
        luma = image::imageops::resize(&luma, w as u32, h as u32, FilterType::Triangle);
    }
    let px = Array2::from_shape_fn((h, w), |(y, x)| luma.get_pixel(x as u32, y as u32)[0] as f64);
    Ok(ImageTensor::from_clipped(px))
}

pub fn load_mask(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.into(),
        reason: e.to_string(),
    })?;
    let l = img.to_luma8();
    Ok(Array2::from_shape_fn(
        (l.height() as usize, l.width() as usize),
        |(y, x)| l.get_pixel(x as u32, y as u32)[0],
    ))
}

pub fn save_mask(mask: &LabelMap, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([mask[[y as usize, x as usize]]]));
    buf.save(path).map_err(|e| Error::Image {
        path: path.into(),
        reason: e.to_string(),
    })
}

/// Splits an image into `T×p²` rows, tokens in raster order, pixels of each
/// patch in raster order.
pub fn patchify(pixels: &Array2<f64>, patch: usize) -> Array2<f64> {
    let (h, w) = pixels.dim();
    let (gh, gw) = (h / patch, w / patch);
    Array2::from_shape_fn((gh * gw, patch * patch), |(t, k)| {
        let (gy, gx) = (t / gw, t % gw);
        let (py, px) = (k / patch, k % patch);
        pixels[[gy * patch + py, gx * patch + px]]
    })
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Array2<f64>, height: usize, width: usize, patch: usize) -> Array2<f64> {
    let gw = width / patch;
    Array2::from_shape_fn((height, width), |(y, x)| {
        let t = (y / patch) * gw + x / patch;
        let k = (y % patch) * patch + x % patch;
        tokens[[t, k]]
    })
}
