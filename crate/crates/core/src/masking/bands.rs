use ndarray::Array2;

/// Band index of bins that are never masked.
pub const PRESERVED: u8 = u8::MAX;

/// Signed frequency offset of centred index `i` along an axis of length `n`.
pub fn offset(i: usize, n: usize) -> isize {
    i as isize - (n / 2) as isize
}

/// Centred index of signed frequency offset `d` (wrapped modulo `n`).
pub fn centered_index(d: isize, n: usize) -> usize {
    (d + (n / 2) as isize).rem_euclid(n as isize) as usize
}

/// Unshifted (FFT-order) index of centred index `i`.
pub fn unshifted_index(i: usize, n: usize) -> usize {
    offset(i, n).rem_euclid(n as isize) as usize
}

/// Centred index of the conjugate partner `(−u, −v)`.
pub fn partner(i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
    (
        centered_index(-offset(i, h), h),
        centered_index(-offset(j, w), w),
    )
}

/// Whether centred bin `(i, j)` lies in the nominal centre rectangle of
/// `ph×pw` bins around DC.
pub fn in_center(i: usize, j: usize, h: usize, w: usize, preserve: (usize, usize)) -> bool {
    let (dy, dx) = (offset(i, h), offset(j, w));
    let (ph, pw) = (preserve.0 as isize, preserve.1 as isize);
    let (y0, x0) = (-(ph / 2), -(pw / 2));
    dy >= y0 && dy < y0 + ph && dx >= x0 && dx < x0 + pw
}

/// Normalised radius of centred bin `(i, j)`: each axis offset divided by
/// half the axis length.
pub fn normalized_radius(i: usize, j: usize, h: usize, w: usize) -> f64 {
    let fy = offset(i, h) as f64 / (h as f64 / 2.0);
    let fx = offset(j, w) as f64 / (w as f64 / 2.0);
    (fy * fy + fx * fx).sqrt()
}

/// Per-bin band map over the centred spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMap {
    /// Band index per centred bin, [`PRESERVED`] inside the preserve region.
    pub bands: Array2<u8>,
    pub num_bands: usize,
}

impl BandMap {
    pub fn band(&self, i: usize, j: usize) -> Option<usize> {
        match self.bands[[i, j]] {
            PRESERVED => None,
            b => Some(b as usize),
        }
    }

    pub fn count(&self, band: usize) -> usize {
        self.bands.iter().filter(|&&b| b as usize == band).count()
    }
}

/// Partitions the centred spectrum into `num_bands` radial annuli of equal
/// normalised-radius width over `(0, r_max]`.
///
/// The centre rectangle and its conjugate mirror are marked [`PRESERVED`],
/// which keeps the map conjugate-symmetric for even rectangle sizes.
pub fn band_partition(shape: (usize, usize), num_bands: usize, center_preserve: (usize, usize)) -> BandMap {
    assert!((1..255).contains(&num_bands), "num_bands must be in 1..255");
    let (h, w) = shape;
    let mut r_max = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            r_max = r_max.max(normalized_radius(i, j, h, w));
        }
    }
    let bands = Array2::from_shape_fn((h, w), |(i, j)| {
        let (pi, pj) = partner(i, j, h, w);
        if in_center(i, j, h, w, center_preserve) || in_center(pi, pj, h, w, center_preserve) {
            return PRESERVED;
        }
        let r = normalized_radius(i, j, h, w);
        let b = (r / r_max * num_bands as f64).ceil() as isize - 1;
        b.clamp(0, num_bands as isize - 1) as u8
    });
    BandMap { bands, num_bands }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_band_covers_everything_but_center() {
        let m = band_partition((16, 16), 1, (3, 3));
        assert_eq!(m.count(0), 16 * 16 - 9);
    }

    #[test]
    fn dc_is_preserved() {
        let m = band_partition((8, 8), 3, (3, 3));
        assert_eq!(m.band(4, 4), None);
    }

    #[test]
    fn eight_by_eight_two_bands_matches_radius_bruteforce() {
        let m = band_partition((8, 8), 2, (3, 3));
        // Independent computation with explicit offsets.
        let r_max = 2f64.sqrt();
        let (mut inner, mut outer) = (0, 0);
        for dy in -4i32..4 {
            for dx in -4i32..4 {
                if dy.abs() <= 1 && dx.abs() <= 1 {
                    continue;
                }
                let r = ((dy as f64 / 4.0).powi(2) + (dx as f64 / 4.0).powi(2)).sqrt();
                if r <= r_max / 2.0 {
                    inner += 1;
                } else {
                    outer += 1;
                }
            }
        }
        assert_eq!(m.count(0), inner);
        assert_eq!(m.count(1), outer);
        assert_eq!(inner + outer, 55);
    }

    #[test]
    fn map_is_conjugate_symmetric_for_even_preserve() {
        for (h, w, p) in [(16, 16, (4, 4)), (224, 224, (10, 10)), (12, 20, (3, 5))] {
            let m = band_partition((h, w), 7, p);
            for i in 0..h {
                for j in 0..w {
                    let (pi, pj) = partner(i, j, h, w);
                    assert_eq!(m.bands[[i, j]], m.bands[[pi, pj]]);
                }
            }
        }
    }

    #[test]
    fn index_helpers_round_trip() {
        for n in [7usize, 8] {
            for i in 0..n {
                assert_eq!(centered_index(offset(i, n), n), i);
                let u = unshifted_index(i, n);
                let back = (0..n).find(|&k| unshifted_index(k, n) == u).unwrap();
                assert_eq!(back, i);
            }
        }
        assert_eq!(unshifted_index(4, 8), 0);
    }
}
