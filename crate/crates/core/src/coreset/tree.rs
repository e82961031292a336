use ndarray::{Array2, Axis};

use super::kmeans::{kmeans, sq_dist, KMeans};
use crate::error::Result;
use crate::seed;

/// Level-2 clustering inside one level-1 cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct SubClustering {
    /// Sample indices of the level-1 cluster, ascending.
    pub members: Vec<usize>,
    /// `K2' × d` centroids, `K2' = min(K2, members)`; empty when the
    /// level-1 cluster is empty.
    pub centroids: Array2<f64>,
    /// Level-2 index of each member, aligned with `members`.
    pub assignments: Vec<usize>,
}

/// Two-level hierarchical k-means over sample features.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    pub k1: usize,
    pub k2: usize,
    pub level1: KMeans,
    pub level2: Vec<SubClustering>,
}

/// One leaf of the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub cluster: (usize, usize),
    /// Sample indices, ascending.
    pub members: Vec<usize>,
    /// Euclidean distance of each member to the leaf centroid.
    pub distances: Vec<f64>,
}

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-10;

/// Level-1 k-means over all rows (seed tag `level1`), then level-2 k-means
/// inside each level-1 cluster (seed tag `level2/<j>`).
pub fn build_tree(x: &Array2<f64>, ids: &[String], k1: usize, k2: usize, seed: u64) -> Result<ClusterTree> {
    let level1 = kmeans(x, ids, k1, seed::derive(seed, &["level1"]), KMEANS_MAX_ITERS, KMEANS_TOL)?;
    let mut level2 = Vec::with_capacity(level1.k());
    for j in 0..level1.k() {
        let members: Vec<usize> = (0..x.nrows()).filter(|&i| level1.assignments[i] == j).collect();
        if members.is_empty() {
            level2.push(SubClustering {
                members,
                centroids: Array2::zeros((0, x.ncols())),
                assignments: Vec::new(),
            });
            continue;
        }
        let sub = x.select(Axis(0), &members);
        let sub_ids: Vec<String> = members.iter().map(|&i| ids[i].clone()).collect();
        let k = k2.min(members.len()).max(1);
        let km = kmeans(
            &sub,
            &sub_ids,
            k,
            seed::derive(seed, &["level2", &j.to_string()]),
            KMEANS_MAX_ITERS,
            KMEANS_TOL,
        )?;
        level2.push(SubClustering {
            members,
            centroids: km.centroids,
            assignments: km.assignments,
        });
    }
    Ok(ClusterTree { k1, k2, level1, level2 })
}

impl ClusterTree {
    /// Every `(level-1, level-2)` leaf in index order, including empty ones
    /// (an empty level-1 cluster contributes one empty leaf `(j, 0)`).
    pub fn leaves(&self, x: &Array2<f64>) -> Vec<Leaf> {
        let mut out = Vec::new();
        for (j1, sub) in self.level2.iter().enumerate() {
            if sub.members.is_empty() {
                out.push(Leaf {
                    cluster: (j1, 0),
                    members: Vec::new(),
                    distances: Vec::new(),
                });
                continue;
            }
            for j2 in 0..sub.centroids.nrows() {
                let mut members = Vec::new();
                let mut distances = Vec::new();
                for (m, &i) in sub.members.iter().enumerate() {
                    if sub.assignments[m] == j2 {
                        members.push(i);
                        distances.push(sq_dist(x.row(i), sub.centroids.row(j2)).sqrt());
                    }
                }
                out.push(Leaf {
                    cluster: (j1, j2),
                    members,
                    distances,
                });
            }
        }
        out
    }

    pub fn num_samples(&self) -> usize {
        self.level1.assignments.len()
    }
}
