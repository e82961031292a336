use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Result of one k-means run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Objective (sum of squared distances) after every assignment step.
    pub history: Vec<f64>,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        *self.history.last().expect("at least one assignment step")
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding. The first centre is `gen_range(0..n)`; each further
/// centre draws `u = gen::<f64>() · ΣD²` and takes the first point whose
/// cumulative D² reaches `u`. When every point coincides with a chosen
/// centre the lowest unchosen index is taken.
pub fn kmeans_pp_init(x: &Array2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = x.nrows();
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc >= u {
                    break;
                }
            }
            pick.expect("positive total")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k ≤ n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    chosen
}

/// Lloyd's algorithm from a k-means++ start.
///
/// Each iteration assigns points (ties → lowest cluster index), records the
/// objective, stops if the decrease since the previous iteration is below
/// `tol`, and otherwise recomputes centroids. A cluster left empty is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(x: &Array2<f64>, ids: &[String], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeans> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    for (i, row) in x.outer_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(ids.get(i).cloned().unwrap_or_else(|| i.to_string())));
        }
    }

    let init = kmeans_pp_init(x, k, seed);
    let mut centroids = x.select(Axis(0), &init);
    let mut assignments = vec![0; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut objective = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest(x.row(i), &centroids);
            assignments[i] = j;
            dists[i] = d;
            objective += d;
        }
        let prev = history.last().copied();
        history.push(objective);
        if let Some(p) = prev {
            if p - objective < tol {
                break;
            }
        }

        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(assignments[i]).scaled_add(1.0, &x.row(i));
            counts[assignments[i]] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                let c = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&c);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Farthest point from its own centroid; ties → lowest index.
                let mut far = None;
                for i in 0..n {
                    if taken[i] {
                        continue;
                    }
                    if far.map_or(true, |(_, d)| dists[i] > d) {
                        far = Some((i, dists[i]));
                    }
                }
                if let Some((i, _)) = far {
                    taken[i] = true;
                    let p = x.row(i).to_owned();
                    centroids.row_mut(j).assign(&p);
                }
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        let r = kmeans(&x, &ids(3), 3, 4, 50, 1e-12).unwrap();
        assert_eq!(r.objective(), 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn k_one_gives_the_mean() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]];
        let r = kmeans(&x, &ids(3), 1, 0, 50, 1e-12).unwrap();
        assert!((r.centroids[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((r.centroids[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn four_points_two_clusters() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        for seed in 0..20 {
            let r = kmeans(&x, &ids(4), 2, seed, 50, 1e-12).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
            assert!((r.objective() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(kmeans(&x, &ids(2), 3, 0, 5, 0.0), Err(Error::TooManyClusters { k: 3, n: 2 })));
        let bad = array![[0.0], [f64::NAN]];
        match kmeans(&bad, &ids(2), 1, 0, 5, 0.0) {
            Err(Error::NonFinite(id)) => assert_eq!(id, "s1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let x = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let r = kmeans(&x, &ids(3), 3, 7, 10, 0.0).unwrap();
        assert_eq!(r.objective(), 0.0);
    }

    proptest! {
        #[test]
        fn objective_never_increases(seed in 0u64..1000, n in 2usize..40, k in 1usize..6) {
            let k = k.min(n);
            let mut rng = seed::rng(seed);
            let x = Array2::from_shape_simple_fn((n, 3), || Rng::gen_range(&mut rng, -5.0..5.0));
            let r = kmeans(&x, &ids(n), k, seed, 100, 0.0).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
            prop_assert!(r.assignments.iter().all(|a| *a < k));
        }
    }
}
