//! Feature-gradient coreset selection: two-level k-means over teacher
//! features, gradient-trace quality scores, dual ranking and exact-budget
//! selection.

mod kmeans;
mod scores;
mod select;
mod tree;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use self::kmeans::{kmeans, kmeans_pp_init, sq_dist, KMeans};
pub use self::scores::{quality_key, quality_scores, rank_subcluster, Member, QualityScore, SelectionScore};
pub use self::select::{
    attach_clusters, random_select, read_selection, select, selection_report, write_selection, CoresetSelection,
    ReportRow, SelectionReport,
};
pub use self::tree::{build_tree, ClusterTree, Leaf, SubClustering, KMEANS_MAX_ITERS, KMEANS_TOL};
use crate::encoder::{FeatureSet, GradientTrace};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Quality and diversity ranks weighted by `beta`.
    FeatureGradient,
    /// Quality rank only (`beta = 1`).
    QualityOnly,
    /// Centroid-distance rank only (`beta = 0`).
    DiversityOnly,
    /// Uniform random subset.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoresetConfig {
    /// Level-1 clusters; defaults to the number of distinct organ tags, or
    /// 8 without tags.
    pub k1: Option<usize>,
    pub k2: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Absolute budget; when absent `budget_fraction · N` (rounded) is used.
    pub budget: Option<usize>,
    pub budget_fraction: f64,
    pub strategy: Strategy,
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            k1: None,
            k2: 4,
            alpha: 0.5,
            beta: 0.5,
            budget: None,
            budget_fraction: 0.25,
            strategy: Strategy::FeatureGradient,
        }
    }
}

impl CoresetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == Some(0) || self.k2 == 0 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config("alpha and beta must lie in [0, 1]".into()));
        }
        if self.budget == Some(0) || !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config("budget must be positive".into()));
        }
        Ok(())
    }

    pub fn budget_for(&self, n: usize) -> usize {
        self.budget
            .unwrap_or_else(|| ((self.budget_fraction * n as f64).round() as usize).max(1))
    }

    pub fn k1_for(&self, organs: &[Option<String>]) -> usize {
        self.k1.unwrap_or_else(|| {
            let tags: BTreeSet<&str> = organs.iter().flatten().map(String::as_str).collect();
            if tags.is_empty() {
                8
            } else {
                tags.len()
            }
        })
    }

    pub fn effective_beta(&self) -> f64 {
        match self.strategy {
            Strategy::QualityOnly => 1.0,
            Strategy::DiversityOnly => 0.0,
            _ => self.beta,
        }
    }
}

/// Everything produced by one curation run.
#[derive(Clone, Debug)]
pub struct Curation {
    pub tree: ClusterTree,
    pub scores: Vec<QualityScore>,
    pub selection: CoresetSelection,
    pub report: SelectionReport,
}

/// Runs the full selection pipeline over embedded features and traces.
/// `k1` is clamped to the sample count.
pub fn curate(
    features: &FeatureSet,
    traces: &[GradientTrace],
    config: &CoresetConfig,
    k1: usize,
    seed: u64,
) -> Result<Curation> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::Empty("no embedded samples to curate".into()));
    }
    let by_id: HashMap<&str, &GradientTrace> = traces.iter().map(|t| (t.id.as_str(), t)).collect();
    let ordered = features
        .ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|t| (*t).clone())
                .ok_or_else(|| Error::MissingScore(id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = quality_scores(&ordered, config.alpha)?;
    let x = &features.features;
    let tree = build_tree(x, &features.ids, k1.min(features.len()).max(1), config.k2, seed)?;
    let budget = config.budget_for(features.len());
    let selection = match config.strategy {
        Strategy::Random => {
            let mut s = random_select(&features.ids, &scores, budget, seed)?;
            attach_clusters(&mut s, &tree, x, &features.ids);
            s
        }
        _ => select(&tree, x, &features.ids, &scores, budget, config.effective_beta())?,
    };
    let report = selection_report(&selection, &tree, x, &features.ids);
    Ok(Curation {
        tree,
        scores,
        selection,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn defaults_and_budget() {
        let c = CoresetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.budget_for(64), 16);
        assert_eq!(c.k1_for(&[None, None]), 8);
        assert_eq!(c.k1_for(&[Some("liver".into()), Some("kidney".into()), Some("liver".into())]), 2);
    }

    #[test]
    fn curate_hits_budget_for_every_strategy() {
        let n = 40;
        let features = FeatureSet {
            ids: (0..n).map(|i| format!("x{i:02}")).collect(),
            features: Array2::from_shape_fn((n, 3), |(i, c)| ((i * 7 + c * 3) % 11) as f64),
            failed: vec![],
        };
        let traces: Vec<_> = features
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| GradientTrace::new(id.clone(), vec![1.0 + i as f64 * 0.1, 1.5]))
            .collect();
        for strategy in [Strategy::FeatureGradient, Strategy::QualityOnly, Strategy::DiversityOnly, Strategy::Random] {
            let cfg = CoresetConfig {
                budget: Some(10),
                strategy,
                ..CoresetConfig::default()
            };
            let c = curate(&features, &traces, &cfg, 3, 1).unwrap();
            assert_eq!(c.selection.len(), 10);
            let unique: BTreeSet<_> = c.selection.ids().into_iter().collect();
            assert_eq!(unique.len(), 10);
            assert_eq!(c.report.rows.iter().map(|r| r.selected).sum::<usize>(), 10);
        }
    }
}
