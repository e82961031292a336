//! 2-D DFT helpers over `ndarray` built on `rustfft` (rows, then columns).

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

fn transform_axis(data: &mut Array2<Complex64>, axis: Axis, dir: FftDirection, planner: &mut FftPlanner<f64>) {
    let n = data.len_of(axis);
    let fft = planner.plan_fft(n, dir);
    let mut buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(axis) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Forward 2-D DFT of a real array (unnormalised, FFT index order).
pub fn fft2(x: &Array2<f64>) -> Array2<Complex64> {
    let mut data = x.mapv(|v| Complex64::new(v, 0.0));
    let mut planner = FftPlanner::new();
    transform_axis(&mut data, Axis(1), FftDirection::Forward, &mut planner);
    transform_axis(&mut data, Axis(0), FftDirection::Forward, &mut planner);
    data
}

/// Inverse 2-D DFT, normalised by `1/(H·W)`.
pub fn ifft2(x: &Array2<Complex64>) -> Array2<Complex64> {
    let mut data = x.clone();
    let mut planner = FftPlanner::new();
    transform_axis(&mut data, Axis(1), FftDirection::Inverse, &mut planner);
    transform_axis(&mut data, Axis(0), FftDirection::Inverse, &mut planner);
    let k = 1.0 / data.len() as f64;
    data.mapv_inplace(|v| v * k);
    data
}
