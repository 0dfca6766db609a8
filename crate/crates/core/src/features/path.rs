//! Minimum membrane-weighted path cost between voxel sets.
//!
//! Edge weights are quantized to integer units before the search so that the
//! cost is an exact integer sum: the result does not depend on the order
//! in which paths are relaxed, and swapping start and goal gives the same value.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::FeatureError;
use crate::scalar::Real;
use crate::volume::{Connectivity, ProbabilityGrid, Voxel, Window};

/// Floor on the mean membrane probability of a step.
pub const PATH_EPSILON: f64 = 1e-6;

/// Integer cost units per nm of probability-weighted path.
pub const COST_UNITS_PER_NM: f64 = 1e9;

/// Quantized weight of one step of length `step_nm` between voxels with
/// membrane probabilities `pa` and `pb`.
pub fn edge_weight_units<T: Real>(step_nm: T, pa: T, pb: T) -> u64 {
    let mean = ((pa + pb) / T::lit(2.0)).max(T::lit(PATH_EPSILON));
    let w = (step_nm * mean * T::lit(COST_UNITS_PER_NM)).round();
    w.to_u64().unwrap_or(u64::MAX).max(1)
}

pub fn units_to_cost<T: Real>(units: u64) -> T {
    if units == u64::MAX {
        T::infinity()
    } else {
        T::from_u64(units).expect("u64 representable") / T::lit(COST_UNITS_PER_NM)
    }
}

/// Neighbor offsets with their physical step lengths.
pub fn steps<T: Real>(membrane: &ProbabilityGrid<T>, connectivity: Connectivity) -> Vec<([isize; 3], T)> {
    let p = membrane.resolution().pitch();
    connectivity
        .offsets()
        .into_iter()
        .map(|o| {
            let d = [0, 1, 2].map(|k| T::from_isize(o[k]).expect("small offset") * p[k]);
            (o, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
        })
        .collect()
}

fn check(set: &[Voxel], membrane_dims: [usize; 3], what: &'static str) -> Result<(), FeatureError> {
    if set.is_empty() {
        return Err(FeatureError::EmptySet(what));
    }
    if let Some(v) = set.iter().find(|v| (0..3).any(|k| v[k] >= membrane_dims[k])) {
        return Err(FeatureError::OutsideGrid(*v));
    }
    Ok(())
}

/// Cost from `start` to `goal` restricted to `window`; `+inf` if no path exists.
pub fn path_cost<T: Real>(
    start: &[Voxel],
    goal: &[Voxel],
    membrane: &ProbabilityGrid<T>,
    window: &Window,
    connectivity: Connectivity,
) -> Result<T, FeatureError> {
    Ok(path_costs(start, &[goal.to_vec()], membrane, window, connectivity)?[0])
}

/// One multi-source search from `start`, reporting the cost to each goal set.
pub fn path_costs<T: Real>(
    start: &[Voxel],
    goals: &[Vec<Voxel>],
    membrane: &ProbabilityGrid<T>,
    window: &Window,
    connectivity: Connectivity,
) -> Result<Vec<T>, FeatureError> {
    Ok(path_cost_units(start, goals, membrane, window, connectivity)?.into_iter().map(units_to_cost).collect())
}

/// As [`path_costs`], in integer units; `u64::MAX` marks an unreachable goal.
pub fn path_cost_units<T: Real>(
    start: &[Voxel],
    goals: &[Vec<Voxel>],
    membrane: &ProbabilityGrid<T>,
    window: &Window,
    connectivity: Connectivity,
) -> Result<Vec<u64>, FeatureError> {
    let dims = membrane.dims();
    check(start, dims, "start")?;
    for g in goals {
        check(g, dims, "goal")?;
    }
    let lo = window.lo;
    let ext = window.extent();
    let local = |v: Voxel| -> Option<usize> {
        window.contains(v).then(|| (v[0] - lo[0]) + ext[0] * ((v[1] - lo[1]) + ext[1] * (v[2] - lo[2])))
    };
    let n = ext[0] * ext[1] * ext[2];
    let mut goal_of: Vec<Vec<u32>> = Vec::new();
    let mut goal_index = vec![u32::MAX; n];
    let mut remaining = 0usize;
    for (gi, g) in goals.iter().enumerate() {
        let mut any = false;
        for &v in g {
            if let Some(i) = local(v) {
                if goal_index[i] == u32::MAX {
                    goal_index[i] = goal_of.len() as u32;
                    goal_of.push(vec![gi as u32]);
                } else {
                    goal_of[goal_index[i] as usize].push(gi as u32);
                }
                any = true;
            }
        }
        remaining += usize::from(any);
    }
    let mut best = vec![u64::MAX; goals.len()];
    let mut dist = vec![u64::MAX; n];
    let mut heap = BinaryHeap::new();
    for &v in start {
        if let Some(i) = local(v) {
            if dist[i] != 0 {
                dist[i] = 0;
                heap.push(Reverse((0u64, i)));
            }
        }
    }
    let steps = steps(membrane, connectivity);
    while let Some(Reverse((d, i))) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        if goal_index[i] != u32::MAX {
            for &g in &goal_of[goal_index[i] as usize] {
                if best[g as usize] == u64::MAX {
                    best[g as usize] = d;
                    remaining -= 1;
                }
            }
            if remaining == 0 {
                break;
            }
        }
        let v = [lo[0] + i % ext[0], lo[1] + (i / ext[0]) % ext[1], lo[2] + i / (ext[0] * ext[1])];
        let pv = membrane.get(v);
        for &(o, len) in &steps {
            let Some(u) = membrane.offset(v, o) else { continue };
            let Some(j) = local(u) else { continue };
            let nd = d.saturating_add(edge_weight_units(len, pv, membrane.get(u)));
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Reverse((nd, j)));
            }
        }
    }
    Ok(best)
}
