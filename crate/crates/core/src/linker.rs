//! Candidate trees, spanning-forest assignment and Top-K ranking.
//!
//! Each orphan spine is an independent star: the spine at the root and every
//! in-window shaft of at least a cubic micron as a leaf.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::classifier::Scores;
use crate::features::{CandidateFeatures, FeatureRow};
use crate::grammar::{allowed_transition, GrammarSymbol};
use crate::scalar::Real;
use crate::volume::{LabelVolume, Manifest, ObjectRecord, Window, WindowSpec};

/// Shafts smaller than this many cubic microns are never candidates.
pub const MIN_SHAFT_UM3: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("spine {0} has no synapse")]
    NoSynapse(u64),
    #[error("spine {0} is not a spine in the manifest")]
    NotASpine(u64),
    #[error("window: {0}")]
    Window(String),
    #[error("spine {spine}: spanning-forest edge {forest:?} differs from top-ranked candidate {ranked:?}")]
    SelectionMismatch { spine: u64, forest: Option<u64>, ranked: Option<u64> },
    #[error("k must be at least 1")]
    ZeroK,
}

/// Candidate shaft ids of one spine, before any features exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub spine_id: u64,
    pub synapse_id: u64,
    pub window: Window,
    pub shaft_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Candidate<T> {
    pub shaft_id: u64,
    #[serde(with = "crate::scalar::nonfinite_vec")]
    pub features: Vec<T>,
    pub probability: T,
}

impl<T: Real> Candidate<T> {
    pub fn d_spine_shaft(&self) -> T {
        self.features.first().copied().unwrap_or(T::infinity())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CandidateTree<T> {
    pub spine_id: u64,
    pub synapse_id: u64,
    pub window: Window,
    pub candidates: Vec<Candidate<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RankedEntry<T> {
    pub rank: usize,
    pub shaft_id: u64,
    pub probability: T,
    pub d_spine_shaft: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RankedCandidates<T> {
    pub spine_id: u64,
    pub candidates: Vec<RankedEntry<T>>,
}

/// Canonical order: probability descending, then distance, then shaft id.
pub fn canonical_order<T: Real>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    b.probability
        .partial_cmp(&a.probability)
        .unwrap_or(Ordering::Equal)
        .then(a.d_spine_shaft().partial_cmp(&b.d_spine_shaft()).unwrap_or(Ordering::Equal))
        .then(a.shaft_id.cmp(&b.shaft_id))
}

/// Shafts of at least [`MIN_SHAFT_UM3`] with voxels inside the spine's synapse window.
pub fn build_candidate_set<T: Real>(
    spine_id: u64,
    volume: &LabelVolume<T>,
    manifest: &Manifest<T>,
    records: &[ObjectRecord<T>],
    spec: &WindowSpec<T>,
) -> Result<CandidateSet, LinkError> {
    let by_id: BTreeMap<u64, &ObjectRecord<T>> = records.iter().map(|r| (r.id, r)).collect();
    match by_id.get(&spine_id) {
        Some(r) if r.symbol == GrammarSymbol::Spine => {}
        _ => return Err(LinkError::NotASpine(spine_id)),
    }
    let synapse = manifest.synapse_of_spine(spine_id).ok_or(LinkError::NoSynapse(spine_id))?;
    let res = volume.resolution();
    let center = res.voxel_of(synapse.centroid, volume.dims());
    let window = spec.window_at(center, volume.dims(), res).map_err(|e| LinkError::Window(e.to_string()))?;
    let eligible: BTreeSet<u64> = records
        .iter()
        .filter(|r| {
            allowed_transition(GrammarSymbol::Spine, r.symbol)
                && r.symbol == GrammarSymbol::Shaft
                && r.volume_um3 >= T::lit(MIN_SHAFT_UM3)
                && window.intersects(&r.bbox)
        })
        .map(|r| r.id)
        .collect();
    let mut present = BTreeSet::new();
    for z in window.lo[2]..window.hi[2] {
        for y in window.lo[1]..window.hi[1] {
            for x in window.lo[0]..window.hi[0] {
                let l = volume.get([x, y, z]);
                if eligible.contains(&l) {
                    present.insert(l);
                }
            }
        }
    }
    Ok(CandidateSet { spine_id, synapse_id: synapse.id, window, shaft_ids: present.into_iter().collect() })
}

/// Combine a candidate set with its features and probabilities.
///
/// Candidates without a feature row are dropped; missing scores count as 0.
pub fn assemble_tree<T: Real>(set: &CandidateSet, features: &[FeatureRow<T>], scores: &Scores<T>) -> CandidateTree<T> {
    let rows: BTreeMap<u64, &FeatureRow<T>> =
        features.iter().filter(|r| r.spine_id == set.spine_id).map(|r| (r.shaft_id, r)).collect();
    let candidates = set
        .shaft_ids
        .iter()
        .filter_map(|d| {
            rows.get(d).map(|r| Candidate {
                shaft_id: *d,
                features: r.values.to_vec(),
                probability: scores.get(&(set.spine_id, *d)).copied().unwrap_or(T::zero()),
            })
        })
        .collect();
    CandidateTree { spine_id: set.spine_id, synapse_id: set.synapse_id, window: set.window, candidates }
}

pub fn tree_from_features<T: Real>(set: &CandidateSet, features: &[CandidateFeatures<T>]) -> CandidateTree<T> {
    let rows: Vec<FeatureRow<T>> = features.iter().map(|c| FeatureRow::from_candidate(c, false)).collect();
    assemble_tree(set, &rows, &Scores::new())
}

/// First `min(k, n)` candidates in canonical order.
pub fn top_k<T: Real>(tree: &CandidateTree<T>, k: usize) -> Result<RankedCandidates<T>, LinkError> {
    if k == 0 {
        return Err(LinkError::ZeroK);
    }
    Ok(rank(tree, k))
}

pub fn rank<T: Real>(tree: &CandidateTree<T>, k: usize) -> RankedCandidates<T> {
    let mut sorted: Vec<&Candidate<T>> = tree.candidates.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));
    RankedCandidates {
        spine_id: tree.spine_id,
        candidates: sorted
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, c)| RankedEntry {
                rank: i + 1,
                shaft_id: c.shaft_id,
                probability: c.probability,
                d_spine_shaft: c.d_spine_shaft(),
            })
            .collect(),
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[rb] = ra;
        true
    }
}

/// Kruskal over one star under `w = 1 - p`, with all shafts pre-joined into
/// a single component so that exactly one spine edge survives.
fn forest_edge<T: Real>(tree: &CandidateTree<T>) -> Option<u64> {
    let n = tree.candidates.len();
    if n == 0 {
        return None;
    }
    // node 0 is the spine, nodes 1..=n the shafts
    let mut uf = UnionFind::new(n + 1);
    for i in 2..=n {
        uf.union(1, i);
    }
    let mut edges: Vec<(T, T, u64, usize)> = tree
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (T::one() - c.probability, c.d_spine_shaft(), c.shaft_id, i + 1))
        .collect();
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .then(a.2.cmp(&b.2))
    });
    let mut kept = None;
    for (_, _, id, node) in edges {
        if uf.union(0, node) {
            kept = Some(id);
        }
    }
    kept
}

/// One shaft per spine: the tree's spanning-forest edge, checked against the top-ranked candidate.
pub fn assign<T: Real>(trees: &[CandidateTree<T>]) -> Result<Assignment, LinkError> {
    let mut out = Assignment::new();
    for t in trees {
        let forest = forest_edge(t);
        let ranked = rank(t, 1).candidates.first().map(|c| c.shaft_id);
        if forest != ranked {
            return Err(LinkError::SelectionMismatch { spine: t.spine_id, forest, ranked });
        }
        match forest {
            Some(d) => out.link(t.spine_id, d),
            None => out.unassign(t.spine_id),
        }
    }
    Ok(out)
}

/// Replace probabilities with `1 / (1 + d_spine_shaft)`: the nearest-shaft baseline.
pub fn nearest_distance_baseline<T: Real>(trees: &[CandidateTree<T>]) -> Vec<CandidateTree<T>> {
    trees
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for c in t.candidates.iter_mut() {
                c.probability = T::one() / (T::one() + c.d_spine_shaft());
            }
            t
        })
        .collect()
}

/// 1-based rank of the true parent, when it is among the candidates.
pub fn true_rank<T: Real>(tree: &CandidateTree<T>, truth: &Assignment) -> Option<usize> {
    let parent = truth.shaft_of(tree.spine_id)?;
    rank(tree, usize::MAX).candidates.iter().find(|c| c.shaft_id == parent).map(|c| c.rank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKRow {
    pub k: usize,
    pub hits: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub n_spines: usize,
    /// Spines whose true parent is among their candidates.
    pub truth_in_window: usize,
    pub truth_in_window_rate: f64,
    pub rows: Vec<TopKRow>,
    /// Over spines with the true parent in the window.
    pub mean_rank: Option<f64>,
    pub median_rank: Option<f64>,
    pub mean_candidates: f64,
    pub max_candidates: usize,
}

/// Hit rate at each k; spines without an in-window true parent miss at every k.
pub fn evaluate_topk<T: Real>(trees: &[CandidateTree<T>], truth: &Assignment, ks: &[usize]) -> TopKReport {
    let ranks: Vec<Option<usize>> = trees.iter().map(|t| true_rank(t, truth)).collect();
    let mut found: Vec<usize> = ranks.iter().flatten().copied().collect();
    found.sort_unstable();
    let n = trees.len();
    let rate = |h: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    let rows = ks
        .iter()
        .map(|&k| {
            let hits = found.iter().filter(|&&r| r <= k).count();
            TopKRow { k, hits, total: n, rate: rate(hits) }
        })
        .collect();
    let mean_rank = (!found.is_empty()).then(|| found.iter().sum::<usize>() as f64 / found.len() as f64);
    let median_rank = (!found.is_empty()).then(|| {
        let m = found.len();
        if m % 2 == 1 {
            found[m / 2] as f64
        } else {
            (found[m / 2 - 1] + found[m / 2]) as f64 / 2.0
        }
    });
    let sizes: Vec<usize> = trees.iter().map(|t| t.candidates.len()).collect();
    TopKReport {
        n_spines: n,
        truth_in_window: found.len(),
        truth_in_window_rate: rate(found.len()),
        rows,
        mean_rank,
        median_rank,
        mean_candidates: if n == 0 { 0.0 } else { sizes.iter().sum::<usize>() as f64 / n as f64 },
        max_candidates: sizes.into_iter().max().unwrap_or(0),
    }
}

/// Ranked table as CSV: one row per (spine, rank).
pub fn ranked_csv<T: Real>(ranked: &[RankedCandidates<T>]) -> String {
    let mut out = String::from("spine_id,rank,shaft_id,probability,d_spine_shaft\n");
    for r in ranked {
        for c in &r.candidates {
            out.push_str(&format!("{},{},{},{},{}\n", r.spine_id, c.rank, c.shaft_id, c.probability, c.d_spine_shaft));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;

    fn tree(spec: &[(u64, f64, f64)]) -> CandidateTree<f64> {
        CandidateTree {
            spine_id: 1,
            synapse_id: 1,
            window: Window::full([1, 1, 1]),
            candidates: spec
                .iter()
                .map(|&(id, p, d)| Candidate { shaft_id: id, features: vec![d; N_FEATURES], probability: p })
                .collect(),
        }
    }

    #[test]
    fn argmax_and_ties() {
        let t = tree(&[(10, 0.9, 50.0), (11, 0.3, 10.0), (12, 0.1, 5.0)]);
        assert_eq!(assign(&[t]).unwrap().shaft_of(1), Some(10));
        let t = tree(&[(10, 0.5, 80.0), (11, 0.5, 20.0)]);
        assert_eq!(assign(&[t]).unwrap().shaft_of(1), Some(11));
        let t = tree(&[(12, 0.5, 20.0), (11, 0.5, 20.0)]);
        assert_eq!(assign(std::slice::from_ref(&t)).unwrap().shaft_of(1), Some(11));
        assert_eq!(top_k(&t, 1).unwrap().candidates[0].shaft_id, 11);
        let empty = tree(&[]);
        let a = assign(&[empty]).unwrap();
        assert_eq!(a.get(1), Some(None));
    }

    #[test]
    fn top_k_truncates() {
        let t = tree(&[(10, 0.2, 1.0), (11, 0.7, 1.0), (12, 0.4, 1.0)]);
        let r = top_k(&t, 2).unwrap();
        assert_eq!(r.candidates.iter().map(|c| c.shaft_id).collect::<Vec<_>>(), vec![11, 12]);
        assert_eq!(top_k(&t, 10).unwrap().candidates.len(), 3);
        assert_eq!(top_k(&t, 0), Err(LinkError::ZeroK));
    }

    #[test]
    fn evaluation_counts_missing_truth_as_miss() {
        let a = CandidateTree { spine_id: 1, ..tree(&[(10, 0.9, 1.0), (11, 0.1, 1.0)]) };
        let b = CandidateTree { spine_id: 2, ..tree(&[(10, 0.9, 1.0), (11, 0.1, 1.0)]) };
        let c = CandidateTree { spine_id: 3, ..tree(&[(10, 0.9, 1.0)]) };
        let truth: Assignment = [(1, 10), (2, 11), (3, 99)].into_iter().collect();
        let rep = evaluate_topk(&[a, b, c], &truth, &[1, 2]);
        assert_eq!(rep.truth_in_window, 2);
        assert_eq!(rep.rows[0].hits, 1);
        assert_eq!(rep.rows[1].hits, 2);
        assert_eq!(rep.rows[1].total, 3);
        assert_eq!(rep.mean_rank, Some(1.5));
        assert_eq!(rep.median_rank, Some(1.5));
    }

    #[test]
    fn baseline_prefers_nearest() {
        let t = tree(&[(10, 0.0, 300.0), (11, 0.0, 100.0)]);
        let b = nearest_distance_baseline(&[t]);
        assert_eq!(assign(&b).unwrap().shaft_of(1), Some(11));
    }
}
