//! Random forest over candidate-link features, with leave-one-group-out
//! cross-validation.
//!
//! Trees are grown on bootstrap samples drawn by index from the training set
//! sorted by `(spine_id, shaft_id)`, so example order never reaches the model.
//! Splits minimize class-weighted Gini impurity; leaves keep raw class counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;
use crate::synthgen::stream;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training data has a single class ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cross-validation needs at least 2 groups, found {0}; provide a grouping")]
    TooFewGroups(usize),
    #[error("spine {spine} appears in groups {a} and {b}")]
    SpineInTwoGroups { spine: u64, a: u64, b: u64 },
    #[error("candidate ({0}, {1}) appears more than once")]
    DuplicateCandidate(u64, u64),
    #[error("spine {0} has more than one positive candidate")]
    MultiplePositives(u64),
    #[error("fold {fold}: groups {groups:?} are in both train and test")]
    Leakage { fold: usize, groups: Vec<u64> },
    #[error("invalid forest parameters: {0}")]
    BadParams(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("score table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainingExample<T> {
    pub spine_id: u64,
    pub shaft_id: u64,
    pub group_id: u64,
    pub features: Vec<T>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer bootstrap samples than this become leaves.
    pub min_samples_split: usize,
    /// Columns drawn per split; 0 means ceil(sqrt(n_features)).
    pub features_per_split: usize,
    pub class_weighted: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_samples_split: 4, features_per_split: 4, class_weighted: true }
    }
}

impl ForestParams {
    fn columns_per_split(&self, n_features: usize) -> usize {
        let k = if self.features_per_split == 0 {
            (n_features as f64).sqrt().ceil() as usize
        } else {
            self.features_per_split
        };
        k.clamp(1, n_features)
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        if self.n_trees == 0 {
            return Err(ClassifierError::BadParams("n_trees must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(ClassifierError::BadParams("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum Node<T> {
    /// Samples with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { negatives: u32, positives: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tree<T> {
    pub fn leaf_probability(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { negatives, positives } => {
                    let total = negatives + positives;
                    return if total == 0 {
                        T::zero()
                    } else {
                        T::from_u32(*positives).expect("count") / T::from_u32(total).expect("count")
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ForestModel<T> {
    pub format_version: u32,
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    /// Group held out when the model was trained inside a cross-validation fold.
    pub held_out_group: Option<u64>,
    pub trees: Vec<Tree<T>>,
}

impl<T: Real> ForestModel<T> {
    pub fn to_json(&self) -> Result<String, ClassifierError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::UnsupportedVersion(probe.format_version));
        }
        Ok(serde_json::from_str(text)?)
    }
}

/// Mean over trees of the leaf positive fraction.
pub fn predict_prob<T: Real>(model: &ForestModel<T>, x: &[T]) -> Result<T, ClassifierError> {
    if x.len() != model.n_features {
        return Err(ClassifierError::DimensionMismatch { expected: model.n_features, got: x.len() });
    }
    let sum: T = model.trees.iter().map(|t| t.leaf_probability(x)).sum();
    Ok(sum / T::from_count(model.trees.len()))
}

fn canonical<T: Real>(examples: &[TrainingExample<T>]) -> Vec<&TrainingExample<T>> {
    let mut sorted: Vec<&TrainingExample<T>> = examples.iter().collect();
    sorted.sort_by_key(|e| (e.spine_id, e.shaft_id));
    sorted
}

/// Reject inputs that would let one spine sit on both sides of a fold.
pub fn validate_examples<T: Real>(examples: &[TrainingExample<T>]) -> Result<(), ClassifierError> {
    let mut group_of: BTreeMap<u64, u64> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut positives: BTreeMap<u64, usize> = BTreeMap::new();
    let n_features = examples.first().map_or(0, |e| e.features.len());
    for e in examples {
        if e.features.len() != n_features {
            return Err(ClassifierError::DimensionMismatch { expected: n_features, got: e.features.len() });
        }
        if let Some(&g) = group_of.get(&e.spine_id) {
            if g != e.group_id {
                return Err(ClassifierError::SpineInTwoGroups { spine: e.spine_id, a: g, b: e.group_id });
            }
        }
        group_of.insert(e.spine_id, e.group_id);
        if !seen.insert((e.spine_id, e.shaft_id)) {
            return Err(ClassifierError::DuplicateCandidate(e.spine_id, e.shaft_id));
        }
        if e.label {
            let p = positives.entry(e.spine_id).or_default();
            *p += 1;
            if *p > 1 {
                return Err(ClassifierError::MultiplePositives(e.spine_id));
            }
        }
    }
    Ok(())
}

struct Sample<'a, T> {
    x: &'a [T],
    label: bool,
    count: u32,
}

struct Grower<'a, T> {
    samples: Vec<Sample<'a, T>>,
    params: ForestParams,
    n_features: usize,
    w_pos: T,
    w_neg: T,
    nodes: Vec<Node<T>>,
}

fn gini<T: Real>(neg: T, pos: T) -> T {
    let total = neg + pos;
    if total <= T::zero() {
        return T::zero();
    }
    let (a, b) = (neg / total, pos / total);
    T::one() - a * a - b * b
}

impl<T: Real> Grower<'_, T> {
    fn counts(&self, idx: &[usize]) -> (u32, u32) {
        idx.iter().fold((0, 0), |(n, p), &i| {
            let s = &self.samples[i];
            if s.label {
                (n, p + s.count)
            } else {
                (n + s.count, p)
            }
        })
    }

    /// Best (score, feature, threshold) among the drawn columns.
    fn best_split(&self, idx: &mut [usize], rng: &mut impl RngCore) -> Option<(usize, T)> {
        let k = self.params.columns_per_split(self.n_features);
        let columns = sample(rng, self.n_features, k).into_vec();
        let (neg, pos) = self.counts(idx);
        let wn_total = self.w_neg * T::from_u32(neg).expect("count");
        let wp_total = self.w_pos * T::from_u32(pos).expect("count");
        let parent = (wn_total + wp_total) * gini(wn_total, wp_total);
        let mut best: Option<(T, usize, T)> = None;
        for f in columns {
            idx.sort_by(|&a, &b| {
                self.samples[a].x[f].partial_cmp(&self.samples[b].x[f]).expect("features are not NaN").then(a.cmp(&b))
            });
            let (mut ln, mut lp) = (T::zero(), T::zero());
            for w in 0..idx.len() - 1 {
                let s = &self.samples[idx[w]];
                let c = T::from_u32(s.count).expect("count");
                if s.label {
                    lp = lp + c * self.w_pos;
                } else {
                    ln = ln + c * self.w_neg;
                }
                let lo = s.x[f];
                let hi = self.samples[idx[w + 1]].x[f];
                if lo == hi {
                    continue;
                }
                let (rn, rp) = (wn_total - ln, wp_total - lp);
                let score = (ln + lp) * gini(ln, lp) + (rn + rp) * gini(rn, rp);
                if best.is_none_or(|(b, _, _)| score < b) {
                    let threshold = if hi.is_finite() { lo + (hi - lo) / T::lit(2.0) } else { lo };
                    let threshold = if threshold < hi { threshold } else { lo };
                    best = Some((score, f, threshold));
                }
            }
        }
        match best {
            Some((score, f, t)) if score < parent => Some((f, t)),
            _ => None,
        }
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut impl RngCore) -> usize {
        let (neg, pos) = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { negatives: neg, positives: pos });
        let small = ((neg + pos) as usize) < self.params.min_samples_split;
        if depth >= self.params.max_depth || small || neg == 0 || pos == 0 || idx.len() < 2 {
            return id;
        }
        let mut idx = idx;
        let Some((feature, threshold)) = self.best_split(&mut idx, rng) else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.samples[i].x[feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

fn train_tree<T: Real>(
    data: &[&TrainingExample<T>],
    params: ForestParams,
    n_features: usize,
    weights: (T, T),
    seed: u64,
    index: u64,
) -> Tree<T> {
    let mut rng = stream(seed, 7, index);
    let n = data.len();
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    let samples: Vec<Sample<T>> = data
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(e, &c)| Sample { x: &e.features, label: e.label, count: c })
        .collect();
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut g = Grower { samples, params, n_features, w_neg: weights.0, w_pos: weights.1, nodes: Vec::new() };
    g.grow(idx, 0, &mut rng);
    Tree { nodes: g.nodes }
}

/// Grow `params.n_trees` trees in parallel; the result equals sequential training.
pub fn train_forest<T: Real>(
    examples: &[TrainingExample<T>],
    params: ForestParams,
    seed: u64,
) -> Result<ForestModel<T>, ClassifierError> {
    params.validate()?;
    validate_examples(examples)?;
    let positives = examples.iter().filter(|e| e.label).count();
    let negatives = examples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ClassifierError::SingleClass { positives, negatives });
    }
    let data = canonical(examples);
    let n_features = data[0].features.len();
    let n = T::from_count(data.len());
    let weights = if params.class_weighted {
        (
            n / (T::lit(2.0) * T::from_count(negatives)),
            n / (T::lit(2.0) * T::from_count(positives)),
        )
    } else {
        (T::one(), T::one())
    };
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|i| train_tree(&data, params, n_features, weights, seed, i))
        .collect();
    let feature_names = if n_features == crate::features::N_FEATURES {
        crate::features::FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n_features).map(|i| format!("x{i}")).collect()
    };
    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        params,
        seed,
        n_features,
        feature_names,
        held_out_group: None,
        trees,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_groups: BTreeSet<u64>,
    pub test_groups: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Leave-one-group-out: one fold per distinct group, in ascending group order.
pub fn make_folds<T: Real>(examples: &[TrainingExample<T>]) -> Result<FoldPlan, ClassifierError> {
    let groups: BTreeSet<u64> = examples.iter().map(|e| e.group_id).collect();
    if groups.len() < 2 {
        return Err(ClassifierError::TooFewGroups(groups.len()));
    }
    let folds = groups
        .iter()
        .map(|&g| Fold {
            train_groups: groups.iter().copied().filter(|&h| h != g).collect(),
            test_groups: BTreeSet::from([g]),
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Probability per (spine_id, shaft_id).
pub type Scores<T> = BTreeMap<(u64, u64), T>;

/// Score every candidate with a model trained on the other groups.
pub fn cross_validated_scores<T: Real>(
    examples: &[TrainingExample<T>],
    params: ForestParams,
    seed: u64,
) -> Result<Scores<T>, ClassifierError> {
    validate_examples(examples)?;
    let plan = make_folds(examples)?;
    let mut out = Scores::new();
    for (k, fold) in plan.folds.iter().enumerate() {
        let train: Vec<TrainingExample<T>> =
            examples.iter().filter(|e| fold.train_groups.contains(&e.group_id)).cloned().collect();
        let test: Vec<&TrainingExample<T>> = examples.iter().filter(|e| fold.test_groups.contains(&e.group_id)).collect();
        let train_groups: BTreeSet<u64> = train.iter().map(|e| e.group_id).collect();
        let test_groups: BTreeSet<u64> = test.iter().map(|e| e.group_id).collect();
        let shared: Vec<u64> = train_groups.intersection(&test_groups).copied().collect();
        if !shared.is_empty() {
            return Err(ClassifierError::Leakage { fold: k, groups: shared });
        }
        let fold_seed = stream(seed, 8, k as u64).next_u64();
        let mut model = train_forest(&train, params, fold_seed)?;
        model.held_out_group = fold.test_groups.first().copied();
        for e in test {
            out.insert((e.spine_id, e.shaft_id), predict_prob(&model, &e.features)?);
        }
    }
    Ok(out)
}

/// Score every example with one trained model.
pub fn score_all<T: Real>(model: &ForestModel<T>, examples: &[TrainingExample<T>]) -> Result<Scores<T>, ClassifierError> {
    examples.iter().map(|e| Ok(((e.spine_id, e.shaft_id), predict_prob(model, &e.features)?))).collect()
}

pub fn write_scores<T: Real, W: Write>(scores: &Scores<T>, out: W) -> Result<(), ClassifierError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spine_id", "shaft_id", "probability"])?;
    for ((s, d), p) in scores {
        w.write_record([s.to_string(), d.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores<T: Real, R: Read>(input: R) -> Result<Scores<T>, ClassifierError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["spine_id", "shaft_id", "probability"] {
        return Err(ClassifierError::Table { line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut out = Scores::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| ClassifierError::Table { line: i + 2, message: m.to_string() };
        let s = rec[0].parse().map_err(|_| bad("bad spine_id"))?;
        let d = rec[1].parse().map_err(|_| bad("bad shaft_id"))?;
        let p: T = rec[2].parse().map_err(|_| bad("bad probability"))?;
        if !(p >= T::zero() && p <= T::one()) {
            return Err(bad("probability outside [0, 1]"));
        }
        out.insert((s, d), p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(spine: u64, shaft: u64, group: u64, x: Vec<f64>, label: bool) -> TrainingExample<f64> {
        TrainingExample { spine_id: spine, shaft_id: shaft, group_id: group, features: x, label }
    }

    fn separable() -> Vec<TrainingExample<f64>> {
        (0..40)
            .map(|i| {
                let label = i % 4 == 0;
                let x0 = if label { 1.0 + i as f64 * 0.01 } else { -1.0 - i as f64 * 0.01 };
                ex(i / 4, i, i / 8, vec![x0, (i * 7 % 5) as f64], label)
            })
            .collect()
    }

    #[test]
    fn separable_data_fits_perfectly_and_deterministically() {
        let data = separable();
        let params = ForestParams { n_trees: 15, ..Default::default() };
        let m = train_forest(&data, params, 3).unwrap();
        for e in &data {
            let p = predict_prob(&m, &e.features).unwrap();
            assert_eq!(p > 0.5, e.label, "{e:?} -> {p}");
        }
        let again = train_forest(&data, params, 3).unwrap();
        assert_eq!(m, again);
        let mut shuffled = data.clone();
        shuffled.reverse();
        assert_eq!(train_forest(&shuffled, params, 3).unwrap(), m);
        let negative_region = predict_prob(&m, &[-5.0, 0.0]).unwrap();
        assert!(negative_region <= 0.5);
        assert!(predict_prob(&m, &[1.0]).is_err());
    }

    #[test]
    fn training_accuracy_beats_majority_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<_> = (0..200u64)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = x[0] + 0.5 * x[1] + rng.random_range(-0.3..0.3) > 0.4;
                ex(i, 0, i % 5, x, label)
            })
            .collect();
        let m = train_forest(&data, ForestParams { n_trees: 25, ..Default::default() }, 1).unwrap();
        let correct = data.iter().filter(|e| (predict_prob(&m, &e.features).unwrap() > 0.5) == e.label).count();
        let pos = data.iter().filter(|e| e.label).count();
        let majority = pos.max(data.len() - pos);
        assert!(correct >= majority, "{correct} vs {majority}");
        for t in &m.trees {
            assert!(t.depth() <= 12);
        }
    }

    #[test]
    fn positive_stumps_vote_one() {
        let tree = Tree { nodes: vec![Node::Leaf { negatives: 0, positives: 3 }] };
        let m = ForestModel {
            format_version: MODEL_FORMAT_VERSION,
            params: ForestParams::default(),
            seed: 0,
            n_features: 2,
            feature_names: vec!["a".into(), "b".into()],
            held_out_group: None,
            trees: vec![tree; 5],
        };
        assert_eq!(predict_prob(&m, &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_and_bad_inputs_rejected() {
        let data: Vec<_> = (0..6).map(|i| ex(i, 0, 0, vec![i as f64], false)).collect();
        assert!(matches!(train_forest(&data, ForestParams::default(), 0), Err(ClassifierError::SingleClass { .. })));
        assert!(matches!(make_folds(&data), Err(ClassifierError::TooFewGroups(1))));
        let dup = vec![ex(1, 2, 0, vec![0.0], true), ex(1, 2, 0, vec![1.0], false)];
        assert!(matches!(validate_examples(&dup), Err(ClassifierError::DuplicateCandidate(1, 2))));
    }

    #[test]
    fn folds_partition_groups() {
        let data = separable();
        let plan = make_folds(&data).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut covered = BTreeSet::new();
        for f in &plan.folds {
            assert_eq!(f.test_groups.len(), 1);
            assert!(f.train_groups.is_disjoint(&f.test_groups));
            covered.extend(f.test_groups.iter().copied());
        }
        assert_eq!(covered, (0..5).collect());
    }

    #[test]
    fn cv_scores_cover_each_candidate_once() {
        let data = separable();
        let params = ForestParams { n_trees: 10, ..Default::default() };
        let scores = cross_validated_scores(&data, params, 9).unwrap();
        assert_eq!(scores.len(), data.len());
        assert_eq!(cross_validated_scores(&data, params, 9).unwrap(), scores);
        // smuggling a test spine into another group is refused
        let mut leaky = data.clone();
        let mut copy = leaky[0].clone();
        copy.shaft_id = 999;
        copy.group_id = 4;
        leaky.push(copy);
        assert!(matches!(
            cross_validated_scores(&leaky, params, 9),
            Err(ClassifierError::SpineInTwoGroups { .. })
        ));
    }

    #[test]
    fn model_and_scores_round_trip() {
        let m = train_forest(&separable(), ForestParams { n_trees: 3, ..Default::default() }, 2).unwrap();
        let text = m.to_json().unwrap();
        assert_eq!(ForestModel::<f64>::from_json(&text).unwrap(), m);
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert!(matches!(ForestModel::<f64>::from_json(&bumped), Err(ClassifierError::UnsupportedVersion(9))));
        let scores: Scores<f64> = [((1, 2), 0.25), ((1, 3), 1.0)].into_iter().collect();
        let mut buf = Vec::new();
        write_scores(&scores, &mut buf).unwrap();
        assert_eq!(read_scores::<f64, _>(&buf[..]).unwrap(), scores);
    }

    #[test]
    fn works_in_single_precision() {
        let data: Vec<TrainingExample<f32>> = separable()
            .into_iter()
            .map(|e| TrainingExample {
                spine_id: e.spine_id,
                shaft_id: e.shaft_id,
                group_id: e.group_id,
                features: e.features.iter().map(|&v| v as f32).collect(),
                label: e.label,
            })
            .collect();
        let m = train_forest(&data, ForestParams { n_trees: 5, ..Default::default() }, 4).unwrap();
        let p = predict_prob(&m, &[2.0, 0.0]).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}
