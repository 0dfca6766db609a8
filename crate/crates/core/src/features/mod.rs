//! Link features for one spine against each of its candidate shafts.
//!
//! Seven raw measurements per (spine, shaft) pair, followed by the rank of
//! each of the first six within the spine's candidate set.

pub mod path;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{dist2, dot, normalize, principal_axis, sub, Point, Real};
use crate::volume::{
    point_set_distance, set_distance, shell, Connectivity, LabelVolume, ProbabilityGrid, Voxel, VoxelResolution,
    Window,
};

pub use path::{path_cost, path_costs, PATH_EPSILON};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty {0} voxel set")]
    EmptySet(&'static str),
    #[error("voxel {0:?} lies outside the grid")]
    OutsideGrid(Voxel),
    #[error("spine needs at least {needed} voxels, has {got}")]
    SpineTooSmall { needed: usize, got: usize },
    #[error("spine {0} has no voxels in its window")]
    SpineNotInWindow(u64),
    #[error("spine {0} has no candidates")]
    NoCandidates(u64),
    #[error("membrane dims {membrane:?} differ from label dims {labels:?}")]
    DimsMismatch { labels: [usize; 3], membrane: [usize; 3] },
    #[error("feature table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const N_RAW: usize = 7;
pub const N_RANKED: usize = 6;
pub const N_FEATURES: usize = N_RAW + N_RANKED;

/// Column order of every feature vector and of the feature table.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "d_spine_shaft",
    "d_synapse_shaft",
    "shaft_size",
    "d_spine_end_shaft",
    "d_linear_path_shaft",
    "path_cost",
    "branch_angle",
    "rank_d_spine_shaft",
    "rank_d_synapse_shaft",
    "rank_shaft_size",
    "rank_d_spine_end_shaft",
    "rank_d_linear_path_shaft",
    "rank_path_cost",
];

/// Ray length for the linear propagation feature.
pub const DEFAULT_MAX_EXTENSION_NM: f64 = 2000.0;
/// Neighborhood of the contact point used for the shaft's local axis.
pub const SHAFT_AXIS_RADIUS_NM: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RawFeatures<T> {
    pub d_spine_shaft: T,
    pub d_synapse_shaft: T,
    /// Cubic microns of the shaft inside the window.
    pub shaft_size: T,
    pub d_spine_end_shaft: T,
    pub d_linear_path_shaft: T,
    pub path_cost: T,
    pub branch_angle: T,
}

impl<T: Real> RawFeatures<T> {
    pub fn to_array(&self) -> [T; N_RAW] {
        [
            self.d_spine_shaft,
            self.d_synapse_shaft,
            self.shaft_size,
            self.d_spine_end_shaft,
            self.d_linear_path_shaft,
            self.path_cost,
            self.branch_angle,
        ]
    }

    pub fn from_array(a: [T; N_RAW]) -> Self {
        Self {
            d_spine_shaft: a[0],
            d_synapse_shaft: a[1],
            shaft_size: a[2],
            d_spine_end_shaft: a[3],
            d_linear_path_shaft: a[4],
            path_cost: a[5],
            branch_angle: a[6],
        }
    }
}

/// Features of one (spine, shaft) hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateFeatures<T> {
    pub spine_id: u64,
    pub shaft_id: u64,
    pub raw: RawFeatures<T>,
    pub ranks: [u32; N_RANKED],
    /// Set when the branch angle fell back to its default.
    pub angle_flagged: bool,
}

impl<T: Real> CandidateFeatures<T> {
    pub fn vector(&self) -> [T; N_FEATURES] {
        let mut out = [T::zero(); N_FEATURES];
        out[..N_RAW].copy_from_slice(&self.raw.to_array());
        for (o, r) in out[N_RAW..].iter_mut().zip(self.ranks) {
            *o = T::from_u32(r).expect("rank representable");
        }
        out
    }
}

fn centers<T: Real>(voxels: &[Voxel], res: &VoxelResolution<T>) -> Vec<Point<T>> {
    voxels.iter().map(|&v| res.center(v)).collect()
}

/// Spine voxel center farthest from the synapse; ties go to the smallest voxel.
pub fn spine_end<T: Real>(spine: &[Voxel], synapse: Point<T>, res: &VoxelResolution<T>) -> Result<Point<T>, FeatureError> {
    let mut best: Option<(T, Voxel)> = None;
    for &v in spine {
        let d = dist2(res.center(v), synapse);
        best = match best {
            Some((bd, bv)) if bd > d || (bd == d && bv <= v) => Some((bd, bv)),
            _ => Some((d, v)),
        };
    }
    best.map(|(_, v)| res.center(v)).ok_or(FeatureError::EmptySet("spine"))
}

/// Spine principal axis oriented from the synapse toward the spine end.
///
/// Falls back to the `end - synapse` direction when the covariance is
/// degenerate; the flag reports whether the fallback was used.
fn spine_direction<T: Real>(spine: &[Voxel], synapse: Point<T>, end: Point<T>, res: &VoxelResolution<T>) -> (Option<Point<T>>, bool) {
    let away = sub(end, synapse);
    match principal_axis(&centers(spine, res)) {
        Some(axis) if dot(axis, away) < T::zero() => (Some(axis.map(|a| -a)), false),
        Some(axis) => (Some(axis), false),
        None => (normalize(away), true),
    }
}

/// Shortest distance from the shaft to a ray cast from the spine end along the spine axis.
pub fn linear_propagation_distance<T: Real>(
    spine: &[Voxel],
    synapse: Point<T>,
    shaft: &[Voxel],
    res: &VoxelResolution<T>,
    max_extension: T,
) -> Result<T, FeatureError> {
    if spine.len() < 2 {
        return Err(FeatureError::SpineTooSmall { needed: 2, got: spine.len() });
    }
    if shaft.is_empty() {
        return Err(FeatureError::EmptySet("shaft"));
    }
    let end = spine_end(spine, synapse, res)?;
    let (dir, _) = spine_direction(spine, synapse, end, res);
    let step = res.min_pitch();
    let n = match dir {
        Some(_) => (max_extension / step).floor().to_usize().unwrap_or(0),
        None => 0,
    };
    let dir = dir.unwrap_or([T::zero(); 3]);
    let shaft_centers = centers(shaft, res);
    let mut best = T::infinity();
    for i in 0..=n {
        let t = step * T::from_count(i);
        let p = [end[0] + dir[0] * t, end[1] + dir[1] * t, end[2] + dir[2] * t];
        for c in &shaft_centers {
            best = best.min(dist2(p, *c));
        }
    }
    Ok(best.sqrt())
}

/// Closest voxel pair between two non-empty sets, ties resolved by voxel order.
fn closest_pair<T: Real>(a: &[Voxel], b: &[Voxel], res: &VoxelResolution<T>) -> (Voxel, Voxel) {
    let (sa, sb) = (shell(a), shell(b));
    let w = res.pitch().map(|p| p * p);
    let mut best = (T::infinity(), [0; 3], [0; 3]);
    for p in &sa {
        for q in &sb {
            let d = (0..3).fold(T::zero(), |acc, k| {
                let diff = p[k].abs_diff(q[k]);
                acc + w[k] * T::from_count(diff * diff)
            });
            if d < best.0 || (d == best.0 && (*p, *q) < (best.1, best.2)) {
                best = (d, *p, *q);
            }
        }
    }
    (best.1, best.2)
}

/// Angle in `[0, pi/2]` between the spine axis and the undirected local shaft axis.
///
/// The shaft axis is unsigned, so the spine's orientation relative to the
/// synapse does not matter. Returns `(pi/4, true)` when either axis is degenerate.
pub fn branch_angle<T: Real>(spine: &[Voxel], _synapse: Point<T>, shaft: &[Voxel], res: &VoxelResolution<T>) -> (T, bool) {
    let flagged = (T::FRAC_PI_4(), true);
    if spine.len() < 2 || shaft.is_empty() {
        return flagged;
    }
    let Some(spine_axis) = principal_axis(&centers(spine, res)) else { return flagged };
    let (_, contact) = closest_pair(spine, shaft, res);
    let contact = res.center(contact);
    let r2 = T::lit(SHAFT_AXIS_RADIUS_NM) * T::lit(SHAFT_AXIS_RADIUS_NM);
    let local: Vec<Point<T>> = shaft.iter().map(|&v| res.center(v)).filter(|c| dist2(*c, contact) <= r2).collect();
    let Some(shaft_axis) = principal_axis(&local) else { return flagged };
    let c = dot(spine_axis, shaft_axis).abs().min(T::one());
    (c.acos(), false)
}

/// Competition ranks: 1 + the number of strictly better values.
pub fn competition_ranks<T: PartialOrd>(values: &[T], larger_is_better: bool) -> Vec<u32> {
    values
        .iter()
        .map(|v| {
            let better = values
                .iter()
                .filter(|w| if larger_is_better { *w > v } else { *w < v })
                .count();
            better as u32 + 1
        })
        .collect()
}

/// Ranks of the first six raw features within one candidate set.
pub fn rank_features<T: Real>(raws: &[RawFeatures<T>]) -> Vec<[u32; N_RANKED]> {
    let mut out = vec![[0u32; N_RANKED]; raws.len()];
    for k in 0..N_RANKED {
        let col: Vec<T> = raws.iter().map(|r| r.to_array()[k]).collect();
        // shaft_size is the only column where larger is better
        for (o, r) in out.iter_mut().zip(competition_ranks(&col, k == 2)) {
            o[k] = r;
        }
    }
    out
}

/// Feature vectors for one spine against `candidates`, in input order.
///
/// Candidates with no voxels inside the window are dropped with a warning.
pub fn extract_features<T: Real>(
    volume: &LabelVolume<T>,
    membrane: &ProbabilityGrid<T>,
    spine_id: u64,
    synapse: Point<T>,
    candidates: &[u64],
    window: &Window,
) -> Result<Vec<CandidateFeatures<T>>, FeatureError> {
    if membrane.dims() != volume.dims() {
        return Err(FeatureError::DimsMismatch { labels: volume.dims(), membrane: membrane.dims() });
    }
    if candidates.is_empty() {
        return Err(FeatureError::NoCandidates(spine_id));
    }
    let res = volume.resolution();
    let mut in_window = volume.voxels_in_window(window);
    let spine = in_window.remove(&spine_id).ok_or(FeatureError::SpineNotInWindow(spine_id))?;
    let mut shafts: Vec<(u64, Vec<Voxel>)> = Vec::new();
    for &c in candidates {
        match in_window.get(&c) {
            Some(v) if !v.is_empty() => shafts.push((c, v.clone())),
            _ => log::warn!("spine {spine_id}: candidate {c} has no voxels in the window, dropped"),
        }
    }
    if shafts.is_empty() {
        return Err(FeatureError::NoCandidates(spine_id));
    }
    let goals: Vec<Vec<Voxel>> = shafts.iter().map(|(_, v)| v.clone()).collect();
    let costs = path_costs(&spine, &goals, membrane, window, Connectivity::Full26)?;
    let end = spine_end(&spine, synapse, res)?;
    let max_ext = T::lit(DEFAULT_MAX_EXTENSION_NM);
    let mut raws = Vec::with_capacity(shafts.len());
    let mut flags = Vec::with_capacity(shafts.len());
    for ((_, vox), cost) in shafts.iter().zip(costs) {
        let d_linear = if spine.len() >= 2 {
            linear_propagation_distance(&spine, synapse, vox, res, max_ext)?
        } else {
            point_set_distance(end, vox, res).expect("non-empty")
        };
        let (angle, flagged) = branch_angle(&spine, synapse, vox, res);
        raws.push(RawFeatures {
            d_spine_shaft: set_distance(&spine, vox, res).expect("non-empty"),
            d_synapse_shaft: point_set_distance(synapse, vox, res).expect("non-empty"),
            shaft_size: T::from_count(vox.len()) * res.voxel_volume_um3(),
            d_spine_end_shaft: point_set_distance(end, vox, res).expect("non-empty"),
            d_linear_path_shaft: d_linear,
            path_cost: cost,
            branch_angle: angle,
        });
        flags.push(flagged);
    }
    let ranks = rank_features(&raws);
    Ok(shafts
        .iter()
        .zip(raws)
        .zip(ranks)
        .zip(flags)
        .map(|((((shaft_id, _), raw), ranks), angle_flagged)| CandidateFeatures {
            spine_id,
            shaft_id: *shaft_id,
            raw,
            ranks,
            angle_flagged,
        })
        .collect())
}

/// One spine's extraction request.
#[derive(Debug, Clone)]
pub struct FeatureJob<T> {
    pub spine_id: u64,
    pub synapse: Point<T>,
    pub candidates: Vec<u64>,
    pub window: Window,
}

/// Extract many spines in parallel; output order follows `jobs`.
pub fn extract_all<T: Real>(
    volume: &LabelVolume<T>,
    membrane: &ProbabilityGrid<T>,
    jobs: &[FeatureJob<T>],
) -> Vec<Result<Vec<CandidateFeatures<T>>, FeatureError>> {
    jobs.par_iter()
        .map(|j| extract_features(volume, membrane, j.spine_id, j.synapse, &j.candidates, &j.window))
        .collect()
}

/// One row of the feature table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow<T> {
    pub spine_id: u64,
    pub shaft_id: u64,
    pub values: [T; N_FEATURES],
    pub is_true_parent: bool,
}

impl<T: Real> FeatureRow<T> {
    pub fn from_candidate(c: &CandidateFeatures<T>, is_true_parent: bool) -> Self {
        Self { spine_id: c.spine_id, shaft_id: c.shaft_id, values: c.vector(), is_true_parent }
    }
}

pub fn feature_header() -> Vec<&'static str> {
    let mut h = vec!["spine_id", "shaft_id"];
    h.extend(FEATURE_NAMES);
    h.push("is_true_parent");
    h
}

/// Feature table as CSV; infinite path costs are written as `inf`.
pub fn write_feature_table<T: Real, W: Write>(rows: &[FeatureRow<T>], out: W) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header())?;
    for r in rows {
        let mut rec = vec![r.spine_id.to_string(), r.shaft_id.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(u8::from(r.is_true_parent).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_table<T: Real, R: Read>(input: R) -> Result<Vec<FeatureRow<T>>, FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != feature_header() {
        return Err(FeatureError::Table { line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let bad = |m: String| FeatureError::Table { line, message: m };
        let int = |k: usize| rec[k].parse::<u64>().map_err(|e| bad(format!("column {}: {e}", k + 1)));
        let mut values = [T::zero(); N_FEATURES];
        for (k, v) in values.iter_mut().enumerate() {
            *v = rec[k + 2].parse::<T>().map_err(|_| bad(format!("column {} is not a number", k + 3)))?;
        }
        let is_true_parent = match &rec[N_FEATURES + 2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("is_true_parent must be 0 or 1, got {other:?}"))),
        };
        rows.push(FeatureRow { spine_id: int(0)?, shaft_id: int(1)?, values, is_true_parent });
    }
    Ok(rows)
}

/// Group rows by spine, keeping row order inside each group.
pub fn rows_by_spine<T: Real>(rows: &[FeatureRow<T>]) -> BTreeMap<u64, Vec<FeatureRow<T>>> {
    let mut out: BTreeMap<u64, Vec<FeatureRow<T>>> = BTreeMap::new();
    for r in rows {
        out.entry(r.spine_id).or_default().push(*r);
    }
    out
}
