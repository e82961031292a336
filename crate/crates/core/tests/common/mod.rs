//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use tinydistill::data::ImageTensor;
use tinydistill::distill::{sample_objective, DistillConfig, MimMode, Student, TeacherTargets};
use tinydistill::encoder::{Encoder, EncoderConfig};
use tinydistill::masking::{frequency_mask, spatial_mask, FrequencyMaskSpec, SpatialMaskSpec};
use tinydistill::nn::{ParamStore, Tape};
use tinydistill::seed;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor: below it the central difference is dominated by
/// float64 round-off (about ε·|L|/h ≈ 1e-11), so such coordinates are
/// judged on absolute error.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub checked: usize,
}

/// Central-difference check of `analytic[g][t]` (gradient of `loss` with
/// respect to tensor `t` of the store returned by `store(model, g)`).
/// Tensors with more than `max_per_tensor` entries are checked on an evenly
/// strided subset that includes the first and last entry.
pub fn gradcheck<M: Clone>(
    model: &M,
    analytic: &[Vec<Option<Array2<f64>>>],
    store: impl Fn(&mut M, usize) -> &mut ParamStore,
    loss: impl Fn(&M) -> f64,
    max_per_tensor: usize,
) -> GradReport {
    let mut report = GradReport {
        max_rel: 0.0,
        checked: 0,
    };
    let mut work = model.clone();
    for (g, grads) in analytic.iter().enumerate() {
        let count = store(&mut work, g).len();
        assert_eq!(grads.len(), count, "group {g}: gradient count");
        for t in 0..count {
            let (rows, cols) = store(&mut work, g).get(t).dim();
            let n = rows * cols;
            let picks: Vec<usize> = if n <= max_per_tensor {
                (0..n).collect()
            } else {
                (0..max_per_tensor).map(|k| k * (n - 1) / (max_per_tensor - 1)).collect()
            };
            for flat in picks {
                let (r, c) = (flat / cols, flat % cols);
                let orig = store(&mut work, g).get(t)[[r, c]];
                store(&mut work, g).get_mut(t)[[r, c]] = orig + FD_STEP;
                let up = loss(&work);
                store(&mut work, g).get_mut(t)[[r, c]] = orig - FD_STEP;
                let down = loss(&work);
                store(&mut work, g).get_mut(t)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = grads[t].as_ref().map_or(0.0, |m| m[[r, c]]);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                assert!(
                    rel.is_finite(),
                    "group {g} tensor {t} [{r},{c}]: analytic {a}, numeric {numeric}"
                );
                report.max_rel = report.max_rel.max(rel);
                report.checked += 1;
            }
        }
    }
    report
}

pub fn noise_image(h: usize, w: usize, s: u64) -> ImageTensor {
    let mut rng = seed::rng(s);
    ImageTensor::from_clipped(Array2::from_shape_simple_fn((h, w), || rng.gen::<f64>()))
}

/// A smooth image with structure at several scales.
pub fn pattern_image(h: usize, w: usize, s: u64) -> ImageTensor {
    let mut rng = seed::rng(s);
    let (fy, fx, ph): (f64, f64, f64) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..6.0));
    ImageTensor::from_clipped(Array2::from_shape_fn((h, w), |(y, x)| {
        let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
        0.5 + 0.3 * (6.0 * fy * u + ph).sin() * (6.0 * fx * v).cos() + 0.1 * rng.gen::<f64>()
    }))
}

pub fn tiny_config(dim: usize) -> EncoderConfig {
    EncoderConfig {
        depth: 2,
        dim,
        heads: 2,
        patch_size: 8,
        image_size: (16, 16),
        mlp_ratio: 2,
        mid_layer: 1,
        tap_layers: vec![1, 2],
        use_class_token: false,
    }
}

/// The two masked views of `img` used for distillation.
pub fn views(img: &ImageTensor, s: u64) -> (ImageTensor, ImageTensor) {
    let spa = spatial_mask(
        img,
        &SpatialMaskSpec {
            patch_size: 8,
            mask_ratio: 0.5,
            seed: s,
        },
    )
    .unwrap();
    let freq = frequency_mask(img, &FrequencyMaskSpec::for_size(img.height(), img.width(), s + 1)).unwrap();
    (spa.image, freq.image)
}

/// Depth-2 fixture for checking the full distillation objective.
pub struct DistillFixture {
    pub teacher: Encoder,
    pub student: Student,
    pub original: ImageTensor,
    pub views: (ImageTensor, ImageTensor),
    pub targets: TeacherTargets,
    pub s_cons: f64,
    pub config: DistillConfig,
}

impl DistillFixture {
    pub fn new(student_dim: usize, mim: MimMode) -> Self {
        let teacher = Encoder::new(tiny_config(16), 1).unwrap();
        let student = Student::new(&tiny_config(student_dim), teacher.config(), 2).unwrap();
        let original = pattern_image(16, 16, 3);
        let views = views(&original, 4);
        let targets = TeacherTargets::compute(&teacher, [&views.0, &views.1]).unwrap();
        let s_cons = targets.consistency();
        let config = DistillConfig {
            mid_layer: 1,
            mim,
            lambda_recon: 0.7,
            ..DistillConfig::default()
        };
        Self {
            teacher,
            student,
            original,
            views,
            targets,
            s_cons,
            config,
        }
    }

    /// Total objective of `student` (no gradients).
    pub fn loss(&self, student: &Student) -> f64 {
        let mut tape = Tape::new();
        let terms = sample_objective(
            &mut tape,
            student,
            &self.targets,
            [&self.views.0, &self.views.1],
            &self.original,
            self.s_cons,
            &self.config,
            false,
        )
        .unwrap();
        tape.scalar(terms.total)
    }

    /// Analytic gradients of the total objective for the student encoder,
    /// its decoder and the head projections, in that order.
    pub fn gradients(&self) -> Vec<Vec<Option<Array2<f64>>>> {
        use tinydistill::distill::{PROJECTION_GROUP, STUDENT_DECODER_GROUP, STUDENT_GROUP};
        let s = &self.student;
        let mut tape = Tape::new();
        let terms = sample_objective(
            &mut tape,
            s,
            &self.targets,
            [&self.views.0, &self.views.1],
            &self.original,
            self.s_cons,
            &self.config,
            true,
        )
        .unwrap();
        let g = tape.backward(terms.total);
        vec![
            g.for_group(STUDENT_GROUP, s.encoder.params().len()),
            g.for_group(STUDENT_DECODER_GROUP, s.decoder.params().len()),
            g.for_group(PROJECTION_GROUP, s.projections.len()),
        ]
    }

    pub fn check(&self) -> GradReport {
        gradcheck(
            &self.student,
            &self.gradients(),
            |s: &mut Student, g| match g {
                0 => s.encoder.params_mut(),
                1 => s.decoder.params_mut(),
                _ => &mut s.projections,
            },
            |s| self.loss(s),
            usize::MAX,
        )
    }
}
