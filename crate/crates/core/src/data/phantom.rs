//! Synthetic speckle phantoms: elliptical inclusions in attenuating tissue
//! under multiplicative gamma speckle.
//!
//! Class `c` carries `c + 1` inclusions. Inclusion `k` (1-based) has a fixed
//! echogenicity level and is labelled `k` in the segmentation mask, so the
//! mask label set is a subset of `{0..classes}`.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::image::{save_mask, ImageTensor, LabelMap};
use super::manifest::{Manifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::seed;

const ECHO_LEVELS: [f64; 6] = [0.9, 0.08, 0.62, 0.3, 0.75, 0.18];
const SPECKLE_LOOKS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub n: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub seed: u64,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn radius(&self) -> f64 {
        self.a.max(self.b)
    }
}

/// Balanced class for the `i`-th of `n` samples.
pub fn phantom_label(i: usize, n: usize, classes: usize) -> usize {
    i * classes / n
}

/// Renders one phantom with `inclusions` ellipses.
pub fn render_phantom(
    inclusions: usize,
    height: usize,
    width: usize,
    rng: &mut impl Rng,
) -> (ImageTensor, LabelMap) {
    let (h, w) = (height as f64, width as f64);
    let base = rng.gen_range(0.3..0.45);
    let gain = rng.gen_range(0.75..1.25);
    let band_freq = rng.gen_range(1.0..3.0);
    let band_phase = rng.gen_range(0.0..2.0 * PI);

    let mut ellipses: Vec<Ellipse> = Vec::with_capacity(inclusions);
    for _ in 0..inclusions {
        let mut candidate = None;
        for _attempt in 0..60 {
            let a = rng.gen_range(0.14..0.24) * h;
            let b = rng.gen_range(0.14..0.24) * w;
            let r = a.max(b);
            let cy = rng.gen_range((0.5 * r).min(h / 2.0)..(h - 0.5 * r).max(h / 2.0 + 1e-9));
            let cx = rng.gen_range((0.5 * r).min(w / 2.0)..(w - 0.5 * r).max(w / 2.0 + 1e-9));
            let theta: f64 = rng.gen_range(0.0..PI);
            let e = Ellipse {
                cy,
                cx,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            };
            let clear = ellipses.iter().all(|o| {
                let d = ((o.cy - e.cy).powi(2) + (o.cx - e.cx).powi(2)).sqrt();
                d > o.radius() + e.radius() + 1.0
            });
            candidate = Some(e);
            if clear {
                break;
            }
        }
        ellipses.push(candidate.expect("at least one attempt"));
    }
    let levels: Vec<f64> = (0..inclusions)
        .map(|k| (ECHO_LEVELS[k % ECHO_LEVELS.len()] + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0))
        .collect();

    let speckle = Gamma::new(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS).expect("valid gamma");
    let mut mask = LabelMap::zeros((height, width));
    let mut px = Array2::<f64>::zeros((height, width));
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let attenuation = 1.0 - 0.3 * fy / h;
            let layers = 1.0 + 0.12 * (band_freq * PI * fy / h + band_phase).sin();
            let mut tissue = base * attenuation * layers;
            for (k, e) in ellipses.iter().enumerate() {
                if e.contains(fy, fx) {
                    mask[[y, x]] = (k + 1) as u8;
                    tissue = levels[k] * (0.85 + 0.15 * attenuation);
                }
            }
            let s: f64 = speckle.sample(rng);
            px[[y, x]] = tissue * gain * s;
        }
    }
    (ImageTensor::from_clipped(px), mask)
}

/// Writes `n` phantoms plus masks under `out_dir` and returns their manifest
/// (all records in the train split, paths relative to `out_dir`).
pub fn generate_phantoms(spec: &PhantomSpec, out_dir: &Path) -> Result<Manifest> {
    if spec.classes == 0 || spec.n < spec.classes {
        return Err(Error::Config(format!(
            "need n >= classes >= 1 (n = {}, classes = {})",
            spec.n, spec.classes
        )));
    }
    if spec.patch_size == 0 || spec.height % spec.patch_size != 0 || spec.width % spec.patch_size != 0 {
        return Err(Error::Config(format!(
            "{}x{} is not divisible by patch size {}",
            spec.height, spec.width, spec.patch_size
        )));
    }
    let img_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    for d in [&img_dir, &mask_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let id = format!("phantom_{i:05}");
        let label = phantom_label(i, spec.n, spec.classes);
        let mut rng = seed::rng(seed::sample_seed(spec.seed, &id));
        let (img, mask) = render_phantom(label + 1, spec.height, spec.width, &mut rng);
        let rel_img = Path::new("images").join(format!("{id}.png"));
        let rel_mask = Path::new("masks").join(format!("{id}_mask.png"));
        img.save_png(&out_dir.join(&rel_img))?;
        save_mask(&mask, &out_dir.join(&rel_mask))?;
        records.push(SampleRecord {
            id,
            path: rel_img,
            split: Split::Train,
            label: Some(label as i64),
            mask_path: Some(rel_mask),
            organ: None,
        });
    }
    Manifest::new(records, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::{load_image, load_mask};

    fn spec(n: usize, classes: usize, seed: u64) -> PhantomSpec {
        PhantomSpec {
            n,
            classes,
            height: 32,
            width: 32,
            patch_size: 8,
            seed,
        }
    }

    #[test]
    fn four_phantoms_two_classes() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_phantoms(&spec(4, 2, 7), dir.path()).unwrap();
        let labels: Vec<_> = m.records.iter().map(|r| r.label.unwrap()).collect();
        assert_eq!(labels, [0, 0, 1, 1]);
        for r in &m.records {
            let mask = load_mask(&m.resolve(r.mask_path.as_ref().unwrap())).unwrap();
            assert_eq!(mask.dim(), (32, 32));
            assert!(mask.iter().all(|&v| v as i64 <= 2));
            assert!(mask.iter().any(|&v| v > 0));
        }
    }

    #[test]
    fn single_phantom_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_phantoms(&spec(1, 1, 0), dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].label, Some(0));
        let mask = load_mask(&m.resolve(m.records[0].mask_path.as_ref().unwrap())).unwrap();
        assert!(mask.iter().any(|&v| v == 1));
    }

    #[test]
    fn same_seed_bit_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_phantoms(&spec(3, 3, 11), a.path()).unwrap();
        generate_phantoms(&spec(3, 3, 11), b.path()).unwrap();
        for i in 0..3 {
            let f = format!("images/phantom_{i:05}.png");
            assert_eq!(
                std::fs::read(a.path().join(&f)).unwrap(),
                std::fs::read(b.path().join(&f)).unwrap()
            );
        }
        let img = load_image(&a.path().join("images/phantom_00000.png"), (32, 32)).unwrap();
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn label_set_bounded_by_classes() {
        let mut rng = seed::rng(1);
        for inc in 1..=4 {
            let (_, mask) = render_phantom(inc, 64, 64, &mut rng);
            assert!(mask.iter().all(|&v| (v as usize) <= inc));
        }
    }

    #[test]
    fn unwritable_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("file");
        std::fs::write(&file, b"x").unwrap();
        assert!(matches!(
            generate_phantoms(&spec(2, 1, 0), &file.join("sub")),
            Err(Error::Io { .. })
        ));
    }
}
