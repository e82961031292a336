use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::encoder::GradientTrace;
use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

/// Stability, magnitude and combined quality of one sample's gradient trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub id: String,
    pub s_stb: f64,
    pub s_mag: f64,
    pub s: f64,
    pub alpha: f64,
}

/// `s_stb = clamp(1 − σ/max(μ, ε), 0, 1)`, `s_mag` = min-max normalised μ
/// (0.5 for everyone when all μ coincide), `s = α·s_stb + (1−α)·s_mag`.
pub fn quality_scores(traces: &[GradientTrace], alpha: f64) -> Result<Vec<QualityScore>> {
    if traces.is_empty() {
        return Err(Error::Empty("no gradient traces".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(t) = traces.iter().find(|t| t.norms.is_empty()) {
        return Err(Error::Empty(format!("trace of {:?} has no norms", t.id)));
    }
    let lo = traces.iter().map(|t| t.mu).fold(f64::INFINITY, f64::min);
    let hi = traces.iter().map(|t| t.mu).fold(f64::NEG_INFINITY, f64::max);
    Ok(traces
        .iter()
        .map(|t| {
            let s_stb = (1.0 - t.sigma / t.mu.max(EPS)).clamp(0.0, 1.0);
            let s_mag = if hi > lo { ((t.mu - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
            QualityScore {
                id: t.id.clone(),
                s_stb,
                s_mag,
                s: (alpha * s_stb + (1.0 - alpha) * s_mag).clamp(0.0, 1.0),
                alpha,
            }
        })
        .collect())
}

/// Rank information of one sample within its leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub id: String,
    pub r: f64,
    pub r_q: usize,
    pub r_d: usize,
    pub s: f64,
    pub cluster: (usize, usize),
}

/// One leaf member: `(id, quality s, distance to leaf centroid)`.
pub type Member = (String, f64, f64);

/// Quality compared at 1e-12 resolution so that round-off (e.g. from
/// rescaled traces) cannot reorder mathematically equal scores.
pub fn quality_key(s: f64) -> i64 {
    (s * 1e12).round() as i64
}

pub(crate) fn by_r_then_id(a: &SelectionScore, b: &SelectionScore) -> Ordering {
    a.r.total_cmp(&b.r).then_with(|| a.id.cmp(&b.id))
}

/// Dual ranking within a leaf: `r_q` by descending quality (see
/// [`quality_key`]), `r_d` by
/// ascending distance (ties by id), `r = β·r_q + (1−β)·r_d`. Output sorted
/// by `r`, then id. `cluster` is left at `(0, 0)` for the caller to fill.
pub fn rank_subcluster(members: &[Member], beta: f64) -> Vec<SelectionScore> {
    let n = members.len();
    let mut by_q: Vec<usize> = (0..n).collect();
    by_q.sort_by(|&a, &b| {
        quality_key(members[b].1)
            .cmp(&quality_key(members[a].1))
            .then_with(|| members[a].0.cmp(&members[b].0))
    });
    let mut by_d: Vec<usize> = (0..n).collect();
    by_d.sort_by(|&a, &b| {
        members[a].2.total_cmp(&members[b].2).then_with(|| members[a].0.cmp(&members[b].0))
    });
    let mut r_q = vec![0; n];
    let mut r_d = vec![0; n];
    for (rank, &i) in by_q.iter().enumerate() {
        r_q[i] = rank + 1;
    }
    for (rank, &i) in by_d.iter().enumerate() {
        r_d[i] = rank + 1;
    }
    let mut out: Vec<SelectionScore> = members
        .iter()
        .enumerate()
        .map(|(i, (id, s, _))| SelectionScore {
            id: id.clone(),
            r: beta * r_q[i] as f64 + (1.0 - beta) * r_d[i] as f64,
            r_q: r_q[i],
            r_d: r_d[i],
            s: *s,
            cluster: (0, 0),
        })
        .collect();
    out.sort_by(by_r_then_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stability_and_magnitude_endpoints() {
        let t = vec![
            GradientTrace::new("a", vec![2.0, 2.0, 2.0]),
            GradientTrace::new("b", vec![1.0, 3.0]),
            GradientTrace::new("c", vec![3.0]),
        ];
        let s = quality_scores(&t, 0.5).unwrap();
        assert_eq!(s[0].s_stb, 1.0);
        assert_eq!(s[1].s_stb, 0.5);
        let t = vec![
            GradientTrace::new("a", vec![1.0]),
            GradientTrace::new("b", vec![2.0]),
            GradientTrace::new("c", vec![3.0]),
        ];
        let s = quality_scores(&t, 0.5).unwrap();
        let mags: Vec<f64> = s.iter().map(|q| q.s_mag).collect();
        assert_eq!(mags, vec![0.0, 0.5, 1.0]);
        assert_eq!(s[0].s, 0.5); // s_stb = 1, s_mag = 0
    }

    #[test]
    fn degenerate_traces() {
        let t = vec![GradientTrace::new("a", vec![0.0, 0.0]), GradientTrace::new("b", vec![0.0])];
        let s = quality_scores(&t, 0.3).unwrap();
        assert!(s.iter().all(|q| q.s_mag == 0.5 && q.s_stb == 1.0));
        let wild = vec![GradientTrace::new("a", vec![0.0, 10.0, 0.0, 0.0])];
        assert_eq!(quality_scores(&wild, 0.5).unwrap()[0].s_stb, 0.0);
        assert!(quality_scores(&[], 0.5).is_err());
    }

    #[test]
    fn ranking_examples() {
        let one = rank_subcluster(&[("x".into(), 0.3, 1.0)], 0.5);
        assert_eq!((one[0].r_q, one[0].r_d, one[0].r), (1, 1, 1.0));
        for beta in [0.0, 0.3, 1.0] {
            let two = rank_subcluster(&[("b".into(), 0.1, 5.0), ("a".into(), 0.9, 1.0)], beta);
            assert_eq!(two[0].id, "a");
            assert_eq!(two[0].r, 1.0);
        }
    }

    proptest! {
        #[test]
        fn scores_bounded(norms in proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 1..6), 1..20), alpha in 0.0f64..=1.0) {
            let traces: Vec<_> = norms.into_iter().enumerate().map(|(i, n)| GradientTrace::new(format!("{i}"), n)).collect();
            for q in quality_scores(&traces, alpha).unwrap() {
                for v in [q.s_stb, q.s_mag, q.s] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn ranks_are_permutations(vals in proptest::collection::vec((0.0f64..1.0, 0.0f64..10.0), 1..30), beta in 0.0f64..=1.0) {
            let members: Vec<Member> = vals.iter().enumerate().map(|(i, (s, d))| (format!("id{i:02}"), *s, *d)).collect();
            let out = rank_subcluster(&members, beta);
            let mut q: Vec<usize> = out.iter().map(|x| x.r_q).collect();
            let mut d: Vec<usize> = out.iter().map(|x| x.r_d).collect();
            q.sort();
            d.sort();
            let expect: Vec<usize> = (1..=members.len()).collect();
            prop_assert_eq!(q, expect.clone());
            prop_assert_eq!(d, expect);
            for x in &out {
                prop_assert_eq!(x.r, beta * x.r_q as f64 + (1.0 - beta) * x.r_d as f64);
            }
        }
    }
}
