use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Per-class split sizes by the largest-remainder method, with every split
/// guaranteed at least one sample.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    // Larger fractional part first, earlier split on ties.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], usize::MAX - j)).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Assigns train/val/test per class so each class follows `ratios`.
/// Deterministic under `seed`.
pub fn stratified_split(manifest: &Manifest, ratios: [f64; 3], seed: u64) -> Result<Manifest> {
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let label = r.label.ok_or_else(|| Error::MissingLabel(r.id.clone()))?;
        by_class.entry(label).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (class, mut idx) in by_class {
        if idx.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
            });
        }
        let mut rng = seed::rng(seed::derive(seed, &["split", &class.to_string()]));
        idx.shuffle(&mut rng);
        let [n_train, n_val, _] = split_counts(idx.len(), ratios);
        for (k, i) in idx.into_iter().enumerate() {
            out.records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
