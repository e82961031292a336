use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::scores::{by_r_then_id, rank_subcluster, Member, QualityScore, SelectionScore};
use super::tree::ClusterTree;
use crate::error::{Error, Result};
use crate::seed;

/// Selected samples, sorted by `r` then id.
#[derive(Clone, Debug, PartialEq)]
pub struct CoresetSelection {
    pub budget: usize,
    pub selected: Vec<SelectionScore>,
}

impl CoresetSelection {
    pub fn ids(&self) -> Vec<String> {
        self.selected.iter().map(|s| s.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Per-leaf quota `max(1, ⌊budget·n_j/N⌋)` (capped at `n_j`) of the
/// best-ranked members, then a global repair to exactly `min(budget, N)`:
/// surplus picks with the largest `r` are dropped, or the unselected
/// samples with the smallest `r` are added (ties by id).
pub fn select(
    tree: &ClusterTree,
    features: &Array2<f64>,
    ids: &[String],
    scores: &[QualityScore],
    budget: usize,
    beta: f64,
) -> Result<CoresetSelection> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} outside [0, 1]")));
    }
    let s_of: HashMap<&str, f64> = scores.iter().map(|q| (q.id.as_str(), q.s)).collect();
    let n = tree.num_samples();
    let target = budget.min(n);
    let mut chosen = Vec::new();
    let mut rest = Vec::new();
    for leaf in tree.leaves(features) {
        if leaf.members.is_empty() {
            continue;
        }
        let members = leaf
            .members
            .iter()
            .zip(&leaf.distances)
            .map(|(&i, &d)| {
                let id = &ids[i];
                let s = *s_of.get(id.as_str()).ok_or_else(|| Error::MissingScore(id.clone()))?;
                Ok((id.clone(), s, d))
            })
            .collect::<Result<Vec<Member>>>()?;
        let mut ranked = rank_subcluster(&members, beta);
        for r in &mut ranked {
            r.cluster = leaf.cluster;
        }
        let nj = members.len();
        let quota = ((budget * nj) / n).max(1).min(nj);
        rest.extend(ranked.split_off(quota));
        chosen.extend(ranked);
    }
    chosen.sort_by(by_r_then_id);
    if chosen.len() > target {
        chosen.truncate(target);
    } else if chosen.len() < target {
        rest.sort_by(by_r_then_id);
        let need = target - chosen.len();
        chosen.extend(rest.into_iter().take(need));
        chosen.sort_by(by_r_then_id);
    }
    Ok(CoresetSelection {
        budget,
        selected: chosen,
    })
}

/// Uniform random baseline: a seeded shuffle of the ids, first
/// `min(budget, N)` kept. `r` records the draw position.
pub fn random_select(ids: &[String], scores: &[QualityScore], budget: usize, seed: u64) -> Result<CoresetSelection> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let s_of: HashMap<&str, f64> = scores.iter().map(|q| (q.id.as_str(), q.s)).collect();
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &["random-coreset"])));
    let selected = order
        .into_iter()
        .take(budget)
        .enumerate()
        .map(|(k, id)| SelectionScore {
            id: id.clone(),
            r: (k + 1) as f64,
            r_q: k + 1,
            r_d: k + 1,
            s: s_of.get(id.as_str()).copied().unwrap_or(0.0),
            cluster: (0, 0),
        })
        .collect();
    Ok(CoresetSelection { budget, selected })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level1: usize,
    pub level2: usize,
    pub members: usize,
    pub selected: usize,
    pub coverage: f64,
    pub mean_s: Option<f64>,
    pub min_s: Option<f64>,
    pub max_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub rows: Vec<ReportRow>,
    pub budget: usize,
    pub attained: usize,
}

/// Per-leaf counts and quality statistics of the selected samples.
pub fn selection_report(
    selection: &CoresetSelection,
    tree: &ClusterTree,
    features: &Array2<f64>,
    ids: &[String],
) -> SelectionReport {
    let chosen: HashMap<&str, f64> = selection.selected.iter().map(|s| (s.id.as_str(), s.s)).collect();
    let rows = tree
        .leaves(features)
        .into_iter()
        .map(|leaf| {
            let picked: Vec<f64> = leaf
                .members
                .iter()
                .filter_map(|&i| chosen.get(ids[i].as_str()).copied())
                .collect();
            let (lo, hi) = picked
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let some = !picked.is_empty();
            ReportRow {
                level1: leaf.cluster.0,
                level2: leaf.cluster.1,
                members: leaf.members.len(),
                selected: picked.len(),
                coverage: if leaf.members.is_empty() {
                    0.0
                } else {
                    picked.len() as f64 / leaf.members.len() as f64
                },
                mean_s: some.then(|| picked.iter().sum::<f64>() / picked.len() as f64),
                min_s: some.then_some(lo),
                max_s: some.then_some(hi),
            }
        })
        .collect();
    SelectionReport {
        rows,
        budget: selection.budget,
        attained: selection.len(),
    }
}

impl SelectionReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fills each selected sample's `cluster` from the tree (used for
/// selections that were not made leaf by leaf).
pub fn attach_clusters(selection: &mut CoresetSelection, tree: &ClusterTree, features: &Array2<f64>, ids: &[String]) {
    let mut leaf_of = HashMap::new();
    for leaf in tree.leaves(features) {
        for &i in &leaf.members {
            leaf_of.insert(ids[i].as_str(), leaf.cluster);
        }
    }
    for s in &mut selection.selected {
        if let Some(c) = leaf_of.get(s.id.as_str()) {
            s.cluster = *c;
        }
    }
}

pub fn write_selection(selection: &CoresetSelection, path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in &selection.selected {
        out += &serde_json::to_string(s)?;
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_selection(path: &Path) -> Result<Vec<SelectionScore>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SelectionScore = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        out.push(s);
    }
    Ok(out)
}
