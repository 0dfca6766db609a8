//! In-memory glue between the stages: orphan detection, candidate sets,
//! feature rows, training examples and scored trees.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::Assignment;
use crate::classifier::{Scores, TrainingExample};
use crate::features::{extract_features, FeatureError, FeatureRow};
use crate::grammar::{lint_graph, orphan_spines, GrammarSymbol, ObjectAdjacencyGraph, ProductionTable};
use crate::linker::{assemble_tree, build_candidate_set, CandidateSet, CandidateTree, LinkError};
use crate::scalar::Real;
use crate::volume::{Connectivity, LabelVolume, Manifest, ProbabilityGrid, VolumeError, WindowSpec};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("spine {spine}: {source}")]
    Feature { spine: u64, source: FeatureError },
}

/// Spines with no adjacent shaft, as reported by the grammar linter.
pub fn find_orphans<T: Real>(volume: &LabelVolume<T>, manifest: &Manifest<T>, table: &ProductionTable) -> Vec<u64> {
    let graph = ObjectAdjacencyGraph::from_volume(volume, &manifest.objects, Connectivity::Anisotropic);
    orphan_spines(&lint_graph(&graph, table))
}

/// Candidate sets for every orphan spine that carries a synapse, in spine order.
pub fn candidate_sets<T: Real>(
    volume: &LabelVolume<T>,
    manifest: &Manifest<T>,
    spec: &WindowSpec<T>,
    table: &ProductionTable,
) -> Result<Vec<CandidateSet>, WorkflowError> {
    let records = volume.object_records(&manifest.objects)?;
    let orphans: Vec<u64> = find_orphans(volume, manifest, table)
        .into_iter()
        .filter(|s| manifest.synapse_of_spine(*s).is_some())
        .collect();
    let sets: Result<Vec<CandidateSet>, LinkError> =
        orphans.par_iter().map(|&s| build_candidate_set(s, volume, manifest, &records, spec)).collect();
    Ok(sets?)
}

/// Feature rows for every candidate of every set; `is_true_parent` from `truth`.
pub fn feature_rows<T: Real>(
    volume: &LabelVolume<T>,
    membrane: &ProbabilityGrid<T>,
    manifest: &Manifest<T>,
    sets: &[CandidateSet],
    truth: Option<&Assignment>,
) -> Result<Vec<FeatureRow<T>>, WorkflowError> {
    let per_spine: Vec<Result<Vec<FeatureRow<T>>, WorkflowError>> = sets
        .par_iter()
        .map(|set| {
            if set.shaft_ids.is_empty() {
                return Ok(Vec::new());
            }
            let synapse = manifest.synapse_of_spine(set.spine_id).ok_or(LinkError::NoSynapse(set.spine_id))?;
            let feats = extract_features(volume, membrane, set.spine_id, synapse.centroid, &set.shaft_ids, &set.window)
                .map_err(|source| WorkflowError::Feature { spine: set.spine_id, source })?;
            let parent = truth.and_then(|t| t.shaft_of(set.spine_id));
            Ok(feats.iter().map(|c| FeatureRow::from_candidate(c, Some(c.shaft_id) == parent)).collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_spine {
        out.extend(r?);
    }
    Ok(out)
}

/// Dendrite group of each spine: its true parent's group, else its own manifest group.
pub fn spine_groups<T: Real>(manifest: &Manifest<T>, truth: Option<&Assignment>) -> BTreeMap<u64, u64> {
    let by_id = manifest.objects_by_id();
    manifest
        .objects
        .iter()
        .filter(|o| o.symbol == GrammarSymbol::Spine)
        .map(|o| {
            let parent_group = truth.and_then(|t| t.shaft_of(o.id)).and_then(|d| by_id.get(&d)).map(|d| d.group_id);
            (o.id, parent_group.unwrap_or(o.group_id))
        })
        .collect()
}

pub fn training_examples<T: Real>(rows: &[FeatureRow<T>], groups: &BTreeMap<u64, u64>) -> Vec<TrainingExample<T>> {
    rows.iter()
        .map(|r| TrainingExample {
            spine_id: r.spine_id,
            shaft_id: r.shaft_id,
            group_id: groups.get(&r.spine_id).copied().unwrap_or(0),
            features: r.values.to_vec(),
            label: r.is_true_parent,
        })
        .collect()
}

pub fn scored_trees<T: Real>(sets: &[CandidateSet], rows: &[FeatureRow<T>], scores: &Scores<T>) -> Vec<CandidateTree<T>> {
    let mut by_spine: BTreeMap<u64, Vec<FeatureRow<T>>> = BTreeMap::new();
    for r in rows {
        by_spine.entry(r.spine_id).or_default().push(*r);
    }
    sets.iter()
        .map(|s| assemble_tree(s, by_spine.get(&s.spine_id).map_or(&[][..], |v| v), scores))
        .collect()
}
