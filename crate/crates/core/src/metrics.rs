//! f-beta, synapse line graphs, graph f1 and the fragmentation and
//! proofreading simulators.
//!
//! A line graph has one node per synapse. Two synapses are joined when they
//! share a neuron unit: a connected group of objects. Non-spine objects with
//! the same `group_id` form one unit; a spine joins a unit only through an
//! assignment link. Predicted and truth graphs go through the same code.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{FromPrimitive, Num};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::grammar::GrammarSymbol;
use crate::linker::{rank, CandidateTree};
use crate::scalar::Real;
use crate::synthgen::stream;
use crate::volume::{ObjectEntry, SynapseRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("negative count: tp={tp} fp={fp} fn={fn_}")]
    NegativeCount { tp: i64, fp: i64, fn_: i64 },
    #[error("beta must be positive")]
    BadBeta,
    #[error("synapse {synapse} references unknown object {object}")]
    DanglingObject { synapse: u64, object: u64 },
    #[error("line graphs cover different synapses ({predicted} vs {truth} nodes)")]
    NodeMismatch { predicted: usize, truth: usize },
    #[error("fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("iterations must be at least 1")]
    NoIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: i64, fp: i64, fn_: i64) -> Result<Self, MetricsError> {
        if tp < 0 || fp < 0 || fn_ < 0 {
            return Err(MetricsError::NegativeCount { tp, fp, fn_ });
        }
        Ok(Self { tp: tp as u64, fp: fp as u64, fn_: fn_ as u64 })
    }
}

/// `(1 + b^2) tp / ((1 + b^2) tp + b^2 fn + fp)`, and 0 when the denominator is 0.
///
/// Generic over the number type so that rationals give exact values.
pub fn f_beta<S>(counts: ConfusionCounts, beta: S) -> Result<S, MetricsError>
where
    S: Num + Copy + PartialOrd + FromPrimitive,
{
    if !(beta > S::zero()) {
        return Err(MetricsError::BadBeta);
    }
    let conv = |x: u64| S::from_u64(x).expect("count representable");
    let b2 = beta * beta;
    let num = (S::one() + b2) * conv(counts.tp);
    let den = num + b2 * conv(counts.fn_) + conv(counts.fp);
    if den == S::zero() {
        return Ok(S::zero());
    }
    Ok(num / den)
}

pub fn f1(counts: ConfusionCounts) -> f64 {
    f_beta(counts, 1.0).expect("beta is positive")
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LineGraph {
    pub nodes: BTreeSet<u64>,
    /// Unordered pairs stored as `(min, max)`.
    pub edges: BTreeSet<(u64, u64)>,
}

impl LineGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn average_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.nodes.len() as f64
        }
    }

    /// Subgraph on `keep`, with only edges between kept nodes.
    pub fn induced(&self, keep: &BTreeSet<u64>) -> LineGraph {
        LineGraph {
            nodes: self.nodes.intersection(keep).copied().collect(),
            edges: self.edges.iter().filter(|(a, b)| keep.contains(a) && keep.contains(b)).copied().collect(),
        }
    }
}

struct Dsu {
    parent: BTreeMap<u64, u64>,
}

impl Dsu {
    fn find(&mut self, x: u64) -> u64 {
        let mut root = x;
        while let Some(&p) = self.parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = x;
        while cur != root {
            let next = self.parent[&cur];
            self.parent.insert(cur, root);
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u64, b: u64) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent.insert(hi, lo);
        }
    }
}

/// Neuron unit of every object, keyed by object id.
pub fn neuron_units(assignment: &Assignment, objects: &[ObjectEntry]) -> BTreeMap<u64, u64> {
    let mut dsu = Dsu { parent: objects.iter().map(|o| (o.id, o.id)).collect() };
    let mut first_in_group: BTreeMap<u64, u64> = BTreeMap::new();
    for o in objects.iter().filter(|o| o.symbol != GrammarSymbol::Spine) {
        match first_in_group.get(&o.group_id) {
            Some(&f) => dsu.union(f, o.id),
            None => {
                first_in_group.insert(o.group_id, o.id);
            }
        }
    }
    for (s, d) in assignment.links() {
        if dsu.parent.contains_key(&s) && dsu.parent.contains_key(&d) {
            dsu.union(s, d);
        }
    }
    objects.iter().map(|o| (o.id, dsu.find(o.id))).collect()
}

/// Line graph of `synapses` under `assignment`.
pub fn build_line_graph<T: Real>(
    assignment: &Assignment,
    synapses: &[SynapseRecord<T>],
    objects: &[ObjectEntry],
) -> Result<LineGraph, MetricsError> {
    let units = neuron_units(assignment, objects);
    let mut members: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    let mut nodes = BTreeSet::new();
    for s in synapses {
        nodes.insert(s.id);
        for obj in [s.spine_id, s.axon_side_id] {
            let u = *units.get(&obj).ok_or(MetricsError::DanglingObject { synapse: s.id, object: obj })?;
            members.entry(u).or_default().insert(s.id);
        }
    }
    let mut edges = BTreeSet::new();
    for m in members.values() {
        let m: Vec<u64> = m.iter().copied().collect();
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                edges.insert((m[i], m[j]));
            }
        }
    }
    Ok(LineGraph { nodes, edges })
}

pub fn edge_confusion(predicted: &LineGraph, truth: &LineGraph) -> Result<ConfusionCounts, MetricsError> {
    if predicted.nodes != truth.nodes {
        return Err(MetricsError::NodeMismatch { predicted: predicted.nodes.len(), truth: truth.nodes.len() });
    }
    let tp = predicted.edges.intersection(&truth.edges).count() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: predicted.edges.len() as u64 - tp,
        fn_: truth.edges.len() as u64 - tp,
    })
}

/// Edge f1 between two line graphs over the same synapses.
pub fn graph_f1(predicted: &LineGraph, truth: &LineGraph) -> Result<f64, MetricsError> {
    Ok(f1(edge_confusion(predicted, truth)?))
}

/// Everything the graph scorers need about one volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphContext<'a, T> {
    pub synapses: &'a [SynapseRecord<T>],
    pub objects: &'a [ObjectEntry],
    pub truth: &'a Assignment,
}

impl<T: Real> GraphContext<'_, T> {
    pub fn truth_graph(&self) -> Result<LineGraph, MetricsError> {
        build_line_graph(self.truth, self.synapses, self.objects)
    }

    pub fn score(&self, predicted: &Assignment) -> Result<f64, MetricsError> {
        graph_f1(&build_line_graph(predicted, self.synapses, self.objects)?, &self.truth_graph()?)
    }

    /// Synapses on the given spines.
    pub fn synapses_of(&self, spines: &BTreeSet<u64>) -> BTreeSet<u64> {
        self.synapses.iter().filter(|s| spines.contains(&s.spine_id)).map(|s| s.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_f1: f64,
    pub var_f1: f64,
    pub mean_edges: f64,
    pub var_edges: f64,
    pub mean_degree: f64,
    pub var_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentationCurve {
    pub iterations: usize,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl FragmentationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,mean_f1,var_f1,mean_edges,mean_degree\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{},{}\n", p.fraction, p.mean_f1, p.var_f1, p.mean_edges, p.mean_degree));
        }
        out
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Detach a random `ceil(f * n)` spines from the truth, per fraction and iteration.
///
/// Every iteration draws one permutation of the spines and detaches a prefix
/// of it at each fraction, so detached sets are nested across fractions.
pub fn simulate_fragmentation<T: Real>(
    ctx: &GraphContext<'_, T>,
    fractions: &[f64],
    iterations: usize,
    seed: u64,
) -> Result<FragmentationCurve, MetricsError> {
    if iterations == 0 {
        return Err(MetricsError::NoIterations);
    }
    if let Some(&f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(MetricsError::BadFraction(f));
    }
    let truth_graph = ctx.truth_graph()?;
    let spines: Vec<u64> = ctx.truth.links().map(|(s, _)| s).collect();
    let runs: Vec<Result<Vec<(f64, usize, f64)>, MetricsError>> = (0..iterations as u64)
        .into_par_iter()
        .map(|it| {
            let mut order = spines.clone();
            order.shuffle(&mut stream(seed, 9, it));
            fractions
                .iter()
                .map(|&f| {
                    let k = ((f * order.len() as f64).ceil() as usize).min(order.len());
                    let mut predicted = ctx.truth.clone();
                    for s in &order[..k] {
                        predicted.unassign(*s);
                    }
                    let g = build_line_graph(&predicted, ctx.synapses, ctx.objects)?;
                    Ok((graph_f1(&g, &truth_graph)?, g.edge_count(), g.average_degree()))
                })
                .collect()
        })
        .collect();
    let runs: Vec<Vec<(f64, usize, f64)>> = runs.into_iter().collect::<Result<_, _>>()?;
    let points = fractions
        .iter()
        .enumerate()
        .map(|(i, &fraction)| {
            let f1s: Vec<f64> = runs.iter().map(|r| r[i].0).collect();
            let edges: Vec<f64> = runs.iter().map(|r| r[i].1 as f64).collect();
            let degrees: Vec<f64> = runs.iter().map(|r| r[i].2).collect();
            let (mean_f1, var_f1) = mean_var(&f1s);
            let (mean_edges, var_edges) = mean_var(&edges);
            let (mean_degree, var_degree) = mean_var(&degrees);
            CurvePoint { fraction, mean_f1, var_f1, mean_edges, var_edges, mean_degree, var_degree }
        })
        .collect();
    Ok(FragmentationCurve { iterations, seed, points })
}

/// Assignment after a perfect proofreader reviews the top `k` of every tree:
/// the true parent when it is listed, otherwise no match.
pub fn proofread_assignment<T: Real>(trees: &[CandidateTree<T>], truth: &Assignment, k: usize) -> Assignment {
    let mut out = Assignment::new();
    for t in trees {
        let parent = truth.shaft_of(t.spine_id);
        let listed = rank(t, k).candidates.iter().any(|c| Some(c.shaft_id) == parent);
        match parent {
            Some(d) if listed => out.link(t.spine_id, d),
            _ => out.unassign(t.spine_id),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofreadPoint {
    pub k: usize,
    pub f1: f64,
    /// f1 restricted to synapses on the reviewed spines.
    pub subgraph_f1: f64,
}

/// Graph f1 after perfect Top-K proofreading, for each k.
pub fn simulate_proofreading<T: Real>(
    ctx: &GraphContext<'_, T>,
    trees: &[CandidateTree<T>],
    ks: &[usize],
) -> Result<Vec<ProofreadPoint>, MetricsError> {
    let scorer = SubgraphScorer::new(ctx, trees)?;
    ks.iter()
        .map(|&k| {
            let a = proofread_assignment(trees, ctx.truth, k);
            let (f1, subgraph_f1) = scorer.score(&a)?;
            Ok(ProofreadPoint { k, f1, subgraph_f1 })
        })
        .collect()
}

/// Scores an assignment of the reviewed spines on top of the volume's other links.
///
/// Spines without a tree keep their truth link (they were never orphaned);
/// spines with a tree take whatever the assignment says.
pub struct SubgraphScorer<'a, T> {
    ctx: &'a GraphContext<'a, T>,
    truth_graph: LineGraph,
    reviewed: BTreeSet<u64>,
    sub_nodes: BTreeSet<u64>,
}

impl<'a, T: Real> SubgraphScorer<'a, T> {
    pub fn new(ctx: &'a GraphContext<'a, T>, trees: &[CandidateTree<T>]) -> Result<Self, MetricsError> {
        let reviewed: BTreeSet<u64> = trees.iter().map(|t| t.spine_id).collect();
        let sub_nodes = ctx.synapses_of(&reviewed);
        Ok(Self { truth_graph: ctx.truth_graph()?, ctx, reviewed, sub_nodes })
    }

    pub fn full_assignment(&self, reviewed: &Assignment) -> Assignment {
        let mut base = Assignment::new();
        for (s, d) in self.ctx.truth.links() {
            if !self.reviewed.contains(&s) {
                base.link(s, d);
            }
        }
        base.merged(reviewed)
    }

    /// `(full graph f1, reviewed-subgraph f1)`.
    pub fn score(&self, reviewed: &Assignment) -> Result<(f64, f64), MetricsError> {
        let g = build_line_graph(&self.full_assignment(reviewed), self.ctx.synapses, self.ctx.objects)?;
        let full = graph_f1(&g, &self.truth_graph)?;
        let sub = graph_f1(&g.induced(&self.sub_nodes), &self.truth_graph.induced(&self.sub_nodes))?;
        Ok((full, sub))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obj(id: u64, symbol: GrammarSymbol, group: u64) -> ObjectEntry {
        ObjectEntry { id, symbol, group_id: group }
    }

    fn syn(id: u64, spine: u64, axon: u64) -> SynapseRecord<f64> {
        SynapseRecord { id, centroid: [0.0; 3], spine_id: spine, axon_side_id: axon }
    }

    #[test]
    fn f_beta_examples() {
        let c = |tp, fp, fn_| ConfusionCounts::new(tp, fp, fn_).unwrap();
        assert_eq!(f_beta(c(1, 0, 0), 1.0).unwrap(), 1.0);
        assert_eq!(f_beta(c(8, 2, 4), Ratio::from_integer(1i64)).unwrap(), Ratio::new(16, 22));
        assert_eq!(f_beta(c(8, 2, 4), Ratio::from_integer(2i64)).unwrap(), Ratio::new(40, 58));
        assert_eq!(f_beta(c(0, 0, 0), 1.0).unwrap(), 0.0);
        assert!(ConfusionCounts::new(-1, 0, 0).is_err());
        assert_eq!(f_beta(c(1, 1, 1), 0.0), Err(MetricsError::BadBeta));
    }

    #[test]
    fn line_graph_small_cases() {
        let objects = vec![
            obj(1, GrammarSymbol::Shaft, 1),
            obj(2, GrammarSymbol::Spine, 1),
            obj(3, GrammarSymbol::Spine, 1),
            obj(4, GrammarSymbol::Axon, 5),
            obj(5, GrammarSymbol::Bouton, 5),
            obj(6, GrammarSymbol::Bouton, 6),
        ];
        let linked: Assignment = [(2, 1), (3, 1)].into_iter().collect();
        let one = build_line_graph(&linked, &[syn(1, 2, 5)], &objects).unwrap();
        assert_eq!(one.edge_count(), 0);
        // y1,y2 share the dendrite; y2,y3 share axon 4 via bouton 5
        let g = build_line_graph(&linked, &[syn(1, 2, 6), syn(2, 3, 5), syn(3, 2, 4)], &objects).unwrap();
        assert_eq!(g.edges, BTreeSet::from([(1, 2), (1, 3), (2, 3)]));
        let none = build_line_graph(&Assignment::new(), &[syn(1, 2, 6), syn(2, 3, 5), syn(3, 2, 4)], &objects).unwrap();
        assert_eq!(none.edges, BTreeSet::from([(1, 3), (2, 3)]));
        assert!(matches!(
            build_line_graph(&linked, &[syn(9, 77, 5)], &objects),
            Err(MetricsError::DanglingObject { synapse: 9, object: 77 })
        ));
    }

    #[test]
    fn graph_f1_against_set_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nodes: BTreeSet<u64> = (1..=8).collect();
        let all: Vec<(u64, u64)> = (1..=8u64).flat_map(|a| (a + 1..=8).map(move |b| (a, b))).collect();
        for _ in 0..50 {
            let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<(u64, u64)> {
                all.iter().copied().filter(|_| rng.random_bool(0.4)).collect()
            };
            let a = LineGraph { nodes: nodes.clone(), edges: pick(&mut rng) };
            let b = LineGraph { nodes: nodes.clone(), edges: pick(&mut rng) };
            let both = a.edges.iter().filter(|e| b.edges.contains(e)).count() as f64;
            let p = if a.edges.is_empty() { 0.0 } else { both / a.edges.len() as f64 };
            let r = if b.edges.is_empty() { 0.0 } else { both / b.edges.len() as f64 };
            let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let got = graph_f1(&a, &b).unwrap();
            assert!((got - expect).abs() < 1e-12);
            assert_eq!(got, graph_f1(&b, &a).unwrap());
        }
        let a = LineGraph { nodes: nodes.clone(), edges: BTreeSet::new() };
        let b = LineGraph { nodes: BTreeSet::from([1]), edges: BTreeSet::new() };
        assert!(graph_f1(&a, &b).is_err());
    }

    fn toy() -> (Vec<ObjectEntry>, Vec<SynapseRecord<f64>>, Assignment) {
        let mut objects = vec![obj(1, GrammarSymbol::Shaft, 1), obj(2, GrammarSymbol::Shaft, 2)];
        let mut synapses = Vec::new();
        let mut truth = Assignment::new();
        for a in 0..3u64 {
            objects.push(obj(100 + a, GrammarSymbol::Axon, 10 + a));
        }
        for i in 0..12u64 {
            let spine = 20 + i;
            let bouton = 50 + i;
            objects.push(obj(spine, GrammarSymbol::Spine, 1 + i % 2));
            objects.push(obj(bouton, GrammarSymbol::Bouton, 10 + i % 3));
            synapses.push(syn(i + 1, spine, bouton));
            truth.link(spine, 1 + i % 2);
        }
        (objects, synapses, truth)
    }

    #[test]
    fn fragmentation_curve_endpoints_and_monotone() {
        let (objects, synapses, truth) = toy();
        let ctx = GraphContext { synapses: &synapses, objects: &objects, truth: &truth };
        let fr = [0.0, 0.25, 0.5, 0.75, 1.0];
        let c = simulate_fragmentation(&ctx, &fr, 30, 4).unwrap();
        assert_eq!(c.points[0].mean_f1, 1.0);
        assert_eq!(c.points[0].var_f1, 0.0);
        for w in c.points.windows(2) {
            assert!(w[1].mean_f1 <= w[0].mean_f1);
        }
        let axon_only = build_line_graph(&Assignment::new(), &synapses, &objects).unwrap();
        let expect = graph_f1(&axon_only, &ctx.truth_graph().unwrap()).unwrap();
        assert_eq!(c.points[4].mean_f1, expect);
        assert_eq!(simulate_fragmentation(&ctx, &fr, 30, 4).unwrap(), c);
        assert!(c.to_csv().starts_with("fraction,mean_f1,var_f1,mean_edges,mean_degree\n0,1,0,"));
        assert_eq!(simulate_fragmentation(&ctx, &[1.5], 1, 0), Err(MetricsError::BadFraction(1.5)));
    }
}
