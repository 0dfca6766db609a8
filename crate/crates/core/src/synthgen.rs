//! Synthetic phantoms with known spine-to-shaft ground truth, and the
//! spine detachment fragmenter that stands in for segmentation failures.
//!
//! Shafts are smooth random-walk tubes. Each spine is a thin neck plus a
//! bulbous head grown from one shaft; its head carries one synapse facing a
//! bouton threaded on an axon. Objects other than a spine and its parent
//! (or an axon and its boutons) never touch, so a fresh phantom lints clean.
//!
//! Every object draws from its own ChaCha stream keyed by `(seed, kind, index)`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::grammar::GrammarSymbol;
use crate::scalar::{dist2, dot, normalize, sub, Point, Real};
use crate::volume::{
    squared_distance_transform, Connectivity, LabelVolume, Manifest, ObjectEntry, ProbabilityGrid,
    SynapseRecord, Voxel, VoxelResolution, BACKGROUND,
};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("phantom constraint violated: {0}")]
    Constraint(String),
}

/// Mean and standard deviation of a length, nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct LengthDist<T> {
    pub mean: T,
    pub sigma: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default, deny_unknown_fields)]
pub struct PhantomConfig<T> {
    pub dims: [usize; 3],
    pub resolution: VoxelResolution<T>,
    pub n_shafts: usize,
    /// Spines attempted per shaft; placements that collide are dropped.
    pub spines_per_shaft: usize,
    /// Neck length from the shaft surface to the head center.
    pub spine_length: LengthDist<T>,
    pub spine_neck_radius: T,
    pub spine_head_radius: T,
    pub shaft_radius: T,
    pub n_axons: usize,
    pub axon_radius: T,
    pub bouton_radius: T,
    /// Standard deviation of the additive membrane noise.
    pub membrane_noise: T,
    pub seed: u64,
}

impl<T: Real> Default for PhantomConfig<T> {
    fn default() -> Self {
        Self {
            dims: [160, 160, 96],
            resolution: VoxelResolution { dx: T::lit(40.0), dy: T::lit(40.0), dz: T::lit(50.0) },
            n_shafts: 6,
            spines_per_shaft: 10,
            spine_length: LengthDist { mean: T::lit(600.0), sigma: T::lit(150.0) },
            spine_neck_radius: T::lit(50.0),
            spine_head_radius: T::lit(150.0),
            shaft_radius: T::lit(300.0),
            n_axons: 20,
            axon_radius: T::lit(50.0),
            bouton_radius: T::lit(120.0),
            membrane_noise: T::lit(0.1),
            seed: 7,
        }
    }
}

impl<T: Real> PhantomConfig<T> {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.dims.contains(&0) {
            return bad("dims must be positive");
        }
        VoxelResolution::new(self.resolution.dx, self.resolution.dy, self.resolution.dz)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        if self.n_shafts == 0 || self.spines_per_shaft == 0 || self.n_axons == 0 {
            return bad("n_shafts, spines_per_shaft and n_axons must be at least 1");
        }
        let radii = [
            self.spine_neck_radius,
            self.spine_head_radius,
            self.shaft_radius,
            self.axon_radius,
            self.bouton_radius,
            self.spine_length.mean,
        ];
        if radii.iter().any(|r| !(*r > T::zero()) || !r.is_finite()) {
            return bad("radii and spine length must be positive");
        }
        if self.spine_length.sigma < T::zero() {
            return bad("spine_length.sigma must be non-negative");
        }
        if !(self.membrane_noise >= T::zero() && self.membrane_noise <= T::one()) {
            return bad("membrane_noise must lie in [0, 1]");
        }
        let ext = self.extent_nm();
        let min_plane = ext[0].min(ext[1]);
        let best_case = T::PI() * self.shaft_radius * self.shaft_radius * min_plane * T::lit(1e-9);
        if best_case < T::one() {
            return Err(SynthError::Constraint(format!(
                "a shaft of radius {} nm spanning {} nm holds {:.3} um^3, below the 1 um^3 shaft minimum",
                self.shaft_radius, min_plane, best_case
            )));
        }
        if T::lit(2.0) * self.shaft_radius + T::lit(2.0) * self.resolution.dz >= ext[2] {
            return Err(SynthError::Constraint("shaft diameter does not fit the volume depth".into()));
        }
        Ok(())
    }

    fn extent_nm(&self) -> Point<T> {
        let p = self.resolution.pitch();
        [0, 1, 2].map(|k| T::from_count(self.dims[k]) * p[k])
    }
}

/// Labels, metadata, membrane map and ground truth of one synthetic volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom<T> {
    pub volume: LabelVolume<T>,
    pub manifest: Manifest<T>,
    pub membrane: ProbabilityGrid<T>,
    pub truth: Assignment,
}

impl<T: Real> Phantom<T> {
    pub fn spine_ids(&self) -> Vec<u64> {
        self.truth.spines().collect()
    }
}

pub(crate) fn stream(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 48) ^ index);
    rng
}

fn gauss(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite normal").sample(rng)
}

fn add<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale<T: Real>(a: Point<T>, s: T) -> Point<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Voxels whose centers lie within `radius` of `center`.
fn ball<T: Real>(res: &VoxelResolution<T>, dims: [usize; 3], center: Point<T>, radius: T, out: &mut Vec<Voxel>) {
    let pitch = res.pitch();
    let r2 = radius * radius;
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for k in 0..3 {
        let a = ((center[k] - radius) / pitch[k] - T::lit(0.5)).floor();
        let b = ((center[k] + radius) / pitch[k] - T::lit(0.5)).ceil();
        if b < T::zero() || a >= T::from_count(dims[k]) {
            return;
        }
        lo[k] = a.max(T::zero()).to_usize().unwrap_or(0);
        hi[k] = b.to_usize().unwrap_or(0).min(dims[k] - 1);
    }
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let v = [x, y, z];
                if dist2(res.center(v), center) <= r2 {
                    out.push(v);
                }
            }
        }
    }
}

/// Voxels within `radius` of the polyline through `points`.
fn tube<T: Real>(res: &VoxelResolution<T>, dims: [usize; 3], points: &[Point<T>], radius: T) -> Vec<Voxel> {
    let step = res.min_pitch() * T::lit(0.5);
    let mut raw = Vec::new();
    for w in points.windows(2) {
        let d = sub(w[1], w[0]);
        let len = dot(d, d).sqrt();
        let n = (len / step).ceil().to_usize().unwrap_or(0).max(1);
        for i in 0..n {
            let t = T::from_count(i) / T::from_count(n);
            ball(res, dims, add(w[0], scale(d, t)), radius, &mut raw);
        }
    }
    if let Some(&last) = points.last() {
        ball(res, dims, last, radius, &mut raw);
    }
    let mut seen = HashSet::new();
    raw.retain(|v| seen.insert(*v));
    raw
}

fn inside<T: Real>(p: Point<T>, ext: Point<T>, margin: T) -> bool {
    (0..3).all(|k| p[k] >= margin && p[k] <= ext[k] - margin)
}

fn shaft_centerline<T: Real>(cfg: &PhantomConfig<T>, rng: &mut ChaCha8Rng) -> Vec<Point<T>> {
    let ext = cfg.extent_nm();
    let r = cfg.shaft_radius;
    let zlo = r + cfg.resolution.dz;
    let zhi = ext[2] - r - cfg.resolution.dz;
    let anchor = [
        ext[0] * T::lit(rng.random_range(0.15..0.85)),
        ext[1] * T::lit(rng.random_range(0.15..0.85)),
        zlo + (zhi - zlo) * T::lit(rng.random_range(0.3..0.7)),
    ];
    let heading = rng.random_range(0.0..std::f64::consts::PI);
    let step = cfg.resolution.min_pitch() * T::lit(0.5);
    let mut halves = Vec::new();
    for flip in [0.0, std::f64::consts::PI] {
        let mut theta = heading + flip;
        let mut slope = gauss(rng, 0.0, 0.25).clamp(-0.6, 0.6);
        let mut p = anchor;
        let mut pts = Vec::new();
        while inside(p, ext, -r) {
            pts.push(p);
            theta += gauss(rng, 0.0, 0.02);
            slope = (slope + gauss(rng, 0.0, 0.01)).clamp(-0.6, 0.6);
            let dir = normalize([T::lit(theta.cos()), T::lit(theta.sin()), T::lit(slope)]).expect("unit");
            p = add(p, scale(dir, step));
            if p[2] < zlo || p[2] > zhi {
                p[2] = p[2].max(zlo).min(zhi);
                slope = -slope;
            }
        }
        halves.push(pts);
    }
    let mut line: Vec<Point<T>> = halves[1].iter().rev().copied().collect();
    line.extend(halves[0].iter().skip(1));
    line
}

struct Painter<'a, T> {
    volume: &'a mut LabelVolume<T>,
    offsets: Vec<[isize; 3]>,
}

impl<T: Real> Painter<'_, T> {
    /// Every voxel is background and touches only background or `allowed` labels.
    fn fits(&self, voxels: &[Voxel], allowed: &[u64]) -> bool {
        voxels.iter().all(|&v| self.volume.get(v) == BACKGROUND && self.clear(v, allowed))
    }

    fn clear(&self, v: Voxel, allowed: &[u64]) -> bool {
        self.offsets.iter().all(|&o| {
            self.volume.offset(v, o).is_none_or(|n| {
                let l = self.volume.get(n);
                l == BACKGROUND || allowed.contains(&l)
            })
        })
    }

    fn paint(&mut self, voxels: &[Voxel], id: u64) {
        for &v in voxels {
            self.volume.set(v, id);
        }
    }

    /// Paint only the voxels that keep clear of foreign labels; returns the count painted.
    fn paint_clear(&mut self, voxels: &[Voxel], id: u64, allowed: &[u64]) -> usize {
        let mut n = 0;
        for &v in voxels {
            if self.volume.get(v) == BACKGROUND && self.clear(v, allowed) {
                self.volume.set(v, id);
                n += 1;
            }
        }
        n
    }
}

struct PlacedSpine<T> {
    spine: u64,
    shaft: u64,
    bouton: u64,
    synapse: Point<T>,
    bouton_center: Point<T>,
}

/// Build a phantom from `config`. Identical configs give bit-identical phantoms.
pub fn generate_phantom<T: Real>(config: &PhantomConfig<T>) -> Result<Phantom<T>, SynthError> {
    config.validate()?;
    let res = config.resolution;
    let dims = config.dims;
    let ext = config.extent_nm();
    let mut volume = LabelVolume::filled(dims, BACKGROUND, res);
    let mut painter = Painter { volume: &mut volume, offsets: Connectivity::Full26.offsets() };
    let mut objects = Vec::new();
    let mut next_id = 1u64;

    let mut centerlines: Vec<(u64, Vec<Point<T>>)> = Vec::new();
    let separation = T::lit(2.0) * config.shaft_radius + T::lit(4.0) * res.min_pitch();
    for s in 0..config.n_shafts {
        let mut found = None;
        for attempt in 0..SHAFT_ATTEMPTS {
            let mut rng = stream(config.seed, 1, s as u64 * SHAFT_ATTEMPTS + attempt);
            let line = shaft_centerline(config, &mut rng);
            let long_enough = tube_volume_um3(&line, ext, config.shaft_radius) >= T::lit(1.25);
            if long_enough && centerlines.iter().all(|(_, other)| polyline_gap(&line, other) >= separation) {
                found = Some(line);
                break;
            }
        }
        let Some(line) = found else {
            return Err(SynthError::Constraint(format!(
                "shaft {} could not be placed {} nm clear of the others",
                s + 1,
                separation
            )));
        };
        let id = next_id;
        next_id += 1;
        let voxels = tube(&res, dims, &line, config.shaft_radius);
        painter.paint_clear(&voxels, id, &[id]);
        objects.push(ObjectEntry { id, symbol: GrammarSymbol::Shaft, group_id: id });
        centerlines.push((id, line));
    }

    let pitch_max = res.dx.max(res.dy).max(res.dz);
    let cleft = T::lit(2.0) * pitch_max;
    let margin = res.min_pitch();
    let anisotropic = Connectivity::Anisotropic.offsets();
    let mut placed: Vec<PlacedSpine<T>> = Vec::new();
    for (s, (shaft_id, line)) in centerlines.iter().enumerate() {
        if line.len() < 8 {
            continue;
        }
        for j in 0..config.spines_per_shaft {
            let mut rng = stream(config.seed, 2, (s * 4096 + j) as u64);
            for _attempt in 0..40 {
                let i = rng.random_range(2..line.len() - 2);
                let Some(tangent) = normalize(sub(line[i + 2], line[i - 2])) else { continue };
                let u = [gauss(&mut rng, 0.0, 1.0), gauss(&mut rng, 0.0, 1.0), 0.5 * gauss(&mut rng, 0.0, 1.0)]
                    .map(T::lit);
                let Some(normal) = normalize(sub(u, scale(tangent, dot(u, tangent)))) else { continue };
                let tilt = T::lit(rng.random_range(0.0..0.6));
                let along = if rng.random_bool(0.5) { tangent } else { scale(tangent, -T::one()) };
                let dir = normalize(add(scale(normal, tilt.cos()), scale(along, tilt.sin()))).expect("unit");
                let len = T::lit(gauss(&mut rng, config.spine_length.mean.as_f64(), config.spine_length.sigma.as_f64()))
                    .max(config.spine_length.mean * T::lit(0.5))
                    .min(config.spine_length.mean * T::lit(1.5));
                let base = add(line[i], scale(dir, config.shaft_radius - margin));
                let head = add(line[i], scale(dir, config.shaft_radius + len));
                let synapse = add(head, scale(dir, config.spine_head_radius));
                let bouton_center = add(synapse, scale(dir, cleft + config.bouton_radius));
                let reach = add(bouton_center, scale(dir, config.bouton_radius));
                if !inside(reach, ext, margin) || !inside(head, ext, config.spine_head_radius + margin) {
                    continue;
                }
                let mut spine_vox = tube(&res, dims, &[base, head], config.spine_neck_radius);
                ball(&res, dims, head, config.spine_head_radius, &mut spine_vox);
                let mut seen = HashSet::new();
                spine_vox.retain(|v| seen.insert(*v) && painter.volume.get(*v) != *shaft_id);
                let joined = spine_vox.iter().any(|&v| {
                    anisotropic.iter().any(|&o| painter.volume.offset(v, o).is_some_and(|n| painter.volume.get(n) == *shaft_id))
                });
                if spine_vox.len() < 8 || !joined || !painter.fits(&spine_vox, &[*shaft_id]) {
                    continue;
                }
                let mut bouton_vox = Vec::new();
                ball(&res, dims, bouton_center, config.bouton_radius, &mut bouton_vox);
                let spine_set: HashSet<Voxel> = spine_vox.iter().copied().collect();
                let touches_spine = bouton_vox.iter().any(|&v| {
                    spine_set.contains(&v)
                        || painter.offsets.iter().any(|&o| painter.volume.offset(v, o).is_some_and(|n| spine_set.contains(&n)))
                });
                if bouton_vox.is_empty() || touches_spine || !painter.fits(&bouton_vox, &[]) {
                    continue;
                }
                let spine = next_id;
                let bouton = next_id + 1;
                next_id += 2;
                painter.paint(&spine_vox, spine);
                painter.paint(&bouton_vox, bouton);
                placed.push(PlacedSpine { spine, shaft: *shaft_id, bouton, synapse, bouton_center });
                break;
            }
        }
    }
    if placed.is_empty() {
        return Err(SynthError::Constraint("no spine could be placed without collisions".into()));
    }

    // Round-robin synapses onto axons after a seeded shuffle.
    let mut order: Vec<usize> = (0..placed.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(config.seed, 3, 0));
    }
    let axon_group_base = next_id;
    let mut axon_boutons: Vec<Vec<usize>> = vec![Vec::new(); config.n_axons];
    for (rank, &p) in order.iter().enumerate() {
        axon_boutons[rank % config.n_axons].push(p);
    }
    let mut bouton_group = BTreeMap::new();
    for (k, members) in axon_boutons.iter().enumerate() {
        let group = axon_group_base + k as u64;
        for &p in members {
            bouton_group.insert(placed[p].bouton, group);
        }
    }
    next_id += config.n_axons as u64;
    for (k, members) in axon_boutons.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut rng = stream(config.seed, 5, k as u64);
        let group = axon_group_base + k as u64;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = [T::lit(heading.cos()), T::lit(heading.sin()), T::zero()];
        let mut stops: Vec<Point<T>> = members.iter().map(|&p| placed[p].bouton_center).collect();
        stops.sort_by(|a, b| dot(*a, axis).partial_cmp(&dot(*b, axis)).expect("finite"));
        let far = ext[0] + ext[1] + ext[2];
        let first = stops[0];
        let last = *stops.last().expect("non-empty");
        let lead = if stops.len() > 1 { normalize(sub(stops[0], stops[1])).unwrap_or(axis) } else { scale(axis, -T::one()) };
        let tail = if stops.len() > 1 {
            normalize(sub(last, stops[stops.len() - 2])).unwrap_or(axis)
        } else {
            axis
        };
        let mut path = vec![add(first, scale(lead, far))];
        path.extend(stops.iter().copied());
        path.push(add(last, scale(tail, far)));
        let clipped = clip_polyline(&path, ext);
        let id = next_id;
        next_id += 1;
        let boutons: Vec<u64> = members.iter().map(|&p| placed[p].bouton).collect();
        let mut allowed = boutons.clone();
        allowed.push(id);
        let voxels = tube(&res, dims, &clipped, config.axon_radius);
        if painter.paint_clear(&voxels, id, &allowed) > 0 {
            objects.push(ObjectEntry { id, symbol: GrammarSymbol::Axon, group_id: group });
        }
    }

    let mut synapses = Vec::new();
    let mut truth = Assignment::new();
    for (n, p) in placed.iter().enumerate() {
        let group = objects.iter().find(|o| o.id == p.shaft).expect("shaft listed").group_id;
        objects.push(ObjectEntry { id: p.spine, symbol: GrammarSymbol::Spine, group_id: group });
        objects.push(ObjectEntry { id: p.bouton, symbol: GrammarSymbol::Bouton, group_id: bouton_group[&p.bouton] });
        synapses.push(SynapseRecord { id: n as u64 + 1, centroid: p.synapse, spine_id: p.spine, axon_side_id: p.bouton });
        truth.link(p.spine, p.shaft);
    }
    objects.sort_by_key(|o| o.id);

    let records = volume.object_records(&objects).map_err(|e| SynthError::Constraint(e.to_string()))?;
    for r in records.iter().filter(|r| r.symbol == GrammarSymbol::Shaft) {
        if r.volume_um3 < T::one() {
            return Err(SynthError::Constraint(format!(
                "shaft {} holds {:.3} um^3, below the 1 um^3 shaft minimum",
                r.id, r.volume_um3
            )));
        }
    }

    let membrane = membrane_map(&volume, config.membrane_noise, config.seed);
    let manifest = Manifest {
        objects,
        synapses,
        provenance: format!("synthetic phantom seed={} dims={:?}", config.seed, config.dims),
    };
    Ok(Phantom { volume, manifest, membrane, truth })
}

const SHAFT_ATTEMPTS: u64 = 500;

/// Cylinder volume along the part of a centerline inside the volume box.
fn tube_volume_um3<T: Real>(line: &[Point<T>], ext: Point<T>, radius: T) -> T {
    let len: T = line
        .windows(2)
        .filter(|w| inside(w[0], ext, T::zero()) && inside(w[1], ext, T::zero()))
        .map(|w| dist2(w[0], w[1]).sqrt())
        .sum();
    T::PI() * radius * radius * len * T::lit(1e-9)
}

/// Smallest distance between vertices of two densely sampled polylines.
fn polyline_gap<T: Real>(a: &[Point<T>], b: &[Point<T>]) -> T {
    let mut best = T::infinity();
    for p in a {
        for q in b {
            best = best.min(dist2(*p, *q));
        }
    }
    best.sqrt()
}

/// Clip a polyline to the volume box, keeping interior vertices.
fn clip_polyline<T: Real>(path: &[Point<T>], ext: Point<T>) -> Vec<Point<T>> {
    let clamp = |p: Point<T>, toward: Point<T>| {
        // walk from `toward` (inside) to `p` and stop at the boundary
        let d = sub(p, toward);
        let mut t = T::one();
        for k in 0..3 {
            if d[k] > T::zero() && p[k] > ext[k] {
                t = t.min((ext[k] - toward[k]) / d[k]);
            }
            if d[k] < T::zero() && p[k] < T::zero() {
                t = t.min(-toward[k] / d[k]);
            }
        }
        add(toward, scale(d, t.max(T::zero())))
    };
    let n = path.len();
    let mut out = Vec::with_capacity(n);
    out.push(clamp(path[0], path[1]));
    out.extend_from_slice(&path[1..n - 1]);
    out.push(clamp(path[n - 1], path[n - 2]));
    out
}

/// Membrane probability: high on background and object rims, low in object cores.
///
/// `m = 1 / (1 + exp((d - w) / (w / 4)))` with `d` the distance to the nearest
/// background voxel and `w` the finest voxel pitch, plus clamped Gaussian noise.
/// Values are rounded to f32 so the map survives a file round trip unchanged.
pub fn membrane_map<T: Real>(volume: &LabelVolume<T>, noise: T, seed: u64) -> ProbabilityGrid<T> {
    let edt = squared_distance_transform(volume, |l| l == BACKGROUND);
    let w = volume.resolution().min_pitch();
    let width = w * T::lit(0.25);
    let [nx, ny, nz] = volume.dims();
    let mut out = edt.as_slice().to_vec();
    for z in 0..nz {
        let mut rng = stream(seed, 4, z as u64);
        for i in z * nx * ny..(z + 1) * nx * ny {
            let d = if out[i].is_finite() { out[i].sqrt() } else { T::max_value() };
            let base = T::one() / (T::one() + ((d - w) / width).min(T::lit(60.0)).exp());
            let m = base + T::lit(gauss(&mut rng, 0.0, noise.as_f64()));
            out[i] = T::lit(m.max(T::zero()).min(T::one()).as_f64() as f32 as f64);
        }
    }
    ProbabilityGrid::from_vec(volume.dims(), out, *volume.resolution()).expect("same dims")
}

/// Detachment options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetachConfig {
    /// In-plane background voxels opened between a detached spine and its shaft.
    pub gap: usize,
}

impl Default for DetachConfig {
    fn default() -> Self {
        Self { gap: 2 }
    }
}

/// Outcome of [`detach_spines`].
#[derive(Debug, Clone, PartialEq)]
pub struct Detached<T> {
    pub phantom: Phantom<T>,
    /// Original spine id to the fresh id given to its detached fragment.
    pub renamed: BTreeMap<u64, u64>,
}

/// Detach a uniformly random `ceil(fraction * n_spines)` subset of spines.
///
/// Selected spines get a fresh id and lose every voxel within `gap` voxels
/// in-plane (and one slice in z) of their parent shaft. Truth, manifest and
/// synapses follow the renaming; the membrane map is left untouched.
pub fn detach_spines<T: Real>(
    phantom: &Phantom<T>,
    fraction: f64,
    seed: u64,
    config: DetachConfig,
) -> Detached<T> {
    let fraction = fraction.clamp(0.0, 1.0);
    let spines = phantom.spine_ids();
    let k = (fraction * spines.len() as f64).ceil() as usize;
    let k = k.min(spines.len());
    let mut chosen: Vec<u64> = sample(&mut stream(seed, 6, 0), spines.len(), k).into_iter().map(|i| spines[i]).collect();
    chosen.sort_unstable();

    let mut out = phantom.clone();
    let mut renamed = BTreeMap::new();
    let mut next = phantom.volume.max_label() + 1;
    for &s in &chosen {
        renamed.insert(s, next);
        next += 1;
    }
    if chosen.is_empty() {
        return Detached { phantom: out, renamed };
    }
    let gap = config.gap as isize;
    let dims = out.volume.dims();
    let mut by_spine: BTreeMap<u64, Vec<Voxel>> = BTreeMap::new();
    for (i, &l) in out.volume.as_slice().iter().enumerate() {
        if renamed.contains_key(&l) {
            by_spine.entry(l).or_default().push(out.volume.voxel(i));
        }
    }
    for (&old, voxels) in &by_spine {
        let new = renamed[&old];
        let parent = phantom.truth.shaft_of(old).expect("spine in truth");
        let mut cut = BTreeSet::new();
        for &v in voxels {
            'search: for dz in -1isize..=1 {
                for dy in -gap..=gap {
                    for dx in -gap..=gap {
                        if let Some(n) = out.volume.offset(v, [dx, dy, dz]) {
                            if out.volume.get(n) == parent {
                                cut.insert(v);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        debug_assert!(cut.len() < voxels.len(), "spine {old} vanished under detachment");
        for &v in voxels {
            out.volume.set(v, if cut.contains(&v) { BACKGROUND } else { new });
        }
        let _ = dims;
    }
    for o in out.manifest.objects.iter_mut() {
        if let Some(&new) = renamed.get(&o.id) {
            o.id = new;
        }
    }
    out.manifest.objects.sort_by_key(|o| o.id);
    for s in out.manifest.synapses.iter_mut() {
        if let Some(&new) = renamed.get(&s.spine_id) {
            s.spine_id = new;
        }
    }
    let mut truth = Assignment::new();
    for (s, d) in phantom.truth.links() {
        truth.link(renamed.get(&s).copied().unwrap_or(s), d);
    }
    out.truth = truth;
    out.manifest.provenance = format!(
        "{}; detached {} of {} spines (fraction={fraction}, seed={seed}, gap={})",
        phantom.manifest.provenance,
        chosen.len(),
        spines.len(),
        config.gap
    );
    Detached { phantom: out, renamed }
}
