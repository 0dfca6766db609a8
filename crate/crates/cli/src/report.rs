use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use spinelink_core::assignment::Assignment;
use spinelink_core::linker::{assign, evaluate_topk, nearest_distance_baseline, CandidateTree, LinkError, TopKReport};
use spinelink_core::metrics::{build_line_graph, simulate_proofreading, GraphContext, MetricsError, SubgraphScorer};
use spinelink_core::volume::Manifest;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRow {
    pub method: String,
    pub f1: f64,
    /// f1 over synapses on the orphan spines only.
    pub subgraph_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub edges: usize,
    pub average_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_trees: usize,
    pub n_synapses: usize,
    pub classifier: TopKReport,
    pub nearest_baseline: TopKReport,
    pub graph: Vec<GraphRow>,
    pub truth_graph: GraphStats,
    pub detached_graph: GraphStats,
}

/// Top-K and graph-f1 tables for scored trees against the truth.
pub fn build_report(
    trees: &[CandidateTree<f64>],
    manifest: &Manifest<f64>,
    truth: &Assignment,
    ks: &[usize],
) -> Result<Report, ReportError> {
    let baseline = nearest_distance_baseline(trees);
    let ctx = GraphContext { synapses: &manifest.synapses, objects: &manifest.objects, truth };
    let scorer = SubgraphScorer::new(&ctx, trees)?;
    let detached: Assignment = {
        let mut a = Assignment::new();
        for t in trees {
            a.unassign(t.spine_id);
        }
        a
    };
    let mut graph = Vec::new();
    let mut row = |method: String, a: &Assignment| -> Result<(), ReportError> {
        let (f1, subgraph_f1) = scorer.score(a)?;
        graph.push(GraphRow { method, f1, subgraph_f1 });
        Ok(())
    };
    row("all detached".into(), &detached)?;
    row("nearest shaft".into(), &assign(&baseline)?)?;
    row("spanning forest".into(), &assign(trees)?)?;
    let max = trees.iter().map(|t| t.candidates.len()).max().unwrap_or(0);
    let mut proof_ks: BTreeSet<usize> = ks.iter().copied().filter(|&k| k < max).collect();
    proof_ks.insert(max.max(1));
    let proof_ks: Vec<usize> = proof_ks.into_iter().collect();
    for p in simulate_proofreading(&ctx, trees, &proof_ks)? {
        let method = if p.k >= max { "proofread all".to_string() } else { format!("proofread top-{}", p.k) };
        graph.push(GraphRow { method, f1: p.f1, subgraph_f1: p.subgraph_f1 });
    }
    let stats = |a: &Assignment| -> Result<GraphStats, MetricsError> {
        let g = build_line_graph(a, &manifest.synapses, &manifest.objects)?;
        Ok(GraphStats { edges: g.edge_count(), average_degree: g.average_degree() })
    };
    Ok(Report {
        n_trees: trees.len(),
        n_synapses: manifest.synapses.len(),
        classifier: evaluate_topk(trees, truth, ks),
        nearest_baseline: evaluate_topk(&baseline, truth, ks),
        graph,
        truth_graph: stats(truth)?,
        detached_graph: stats(&scorer.full_assignment(&detached))?,
    })
}

impl Report {
    pub fn topk_csv(&self) -> String {
        let mut out = String::from("k,total,classifier_hits,classifier_rate,baseline_hits,baseline_rate\n");
        for (c, b) in self.classifier.rows.iter().zip(&self.nearest_baseline.rows) {
            let _ = writeln!(out, "{},{},{},{},{},{}", c.k, c.total, c.hits, c.rate, b.hits, b.rate);
        }
        out
    }

    pub fn graph_csv(&self) -> String {
        let mut out = String::from("method,f1,subgraph_f1\n");
        for r in &self.graph {
            let _ = writeln!(out, "{},{},{}", r.method, r.f1, r.subgraph_f1);
        }
        out
    }

    pub fn markdown(&self) -> String {
        let mut md = String::from("# Linking report\n\n");
        let _ = writeln!(md, "{} orphan spines, {} synapses.\n", self.n_trees, self.n_synapses);
        md.push_str("## Top-K\n\n| | classifier | nearest shaft |\n|---|---|---|\n");
        for (c, b) in self.classifier.rows.iter().zip(&self.nearest_baseline.rows) {
            let _ = writeln!(
                md,
                "| Top-{} | {:.3} ({}/{}) | {:.3} ({}/{}) |",
                c.k, c.rate, c.hits, c.total, b.rate, b.hits, b.total
            );
        }
        let c = &self.classifier;
        let _ = writeln!(md, "| Spines with truth in window | {}/{} | |", c.truth_in_window, c.n_spines);
        let _ = writeln!(md, "| Average shafts per tree | {:.2} | |", c.mean_candidates);
        let rank = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(md, "| Median rank | {} | {} |", rank(c.median_rank), rank(self.nearest_baseline.median_rank));
        let _ = writeln!(md, "| Mean rank | {} | {} |", rank(c.mean_rank), rank(self.nearest_baseline.mean_rank));
        md.push_str("\n## Graph f1\n\n| method | full graph | orphan subgraph |\n|---|---|---|\n");
        for r in &self.graph {
            let _ = writeln!(md, "| {} | {:.4} | {:.4} |", r.method, r.f1, r.subgraph_f1);
        }
        let _ = writeln!(
            md,
            "\nLine graph: {} edges (average degree {:.2}) with true links, {} edges (average degree {:.2}) with every orphan detached.",
            self.truth_graph.edges, self.truth_graph.average_degree, self.detached_graph.edges, self.detached_graph.average_degree
        );
        md
    }
}
