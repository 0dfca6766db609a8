//! Dense 3D label volumes and the object bookkeeping built on top of them.
//!
//! Grids are stored x-fastest, then y, then z. Object id `0` is background.
//! Every physical quantity is in nanometers unless the name says otherwise.

mod edt;
mod format;

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::GrammarSymbol;
use crate::scalar::{Point, Real};

pub use edt::squared_distance_transform;
pub use format::{
    decode_grid, decode_volume, encode_grid, encode_volume, read_grid, read_manifest, read_volume,
    write_grid, write_manifest, write_volume, DType, FormatError, FORMAT_VERSION, MAGIC,
};

/// Reserved background id.
pub const BACKGROUND: u64 = 0;

/// Integer voxel coordinate `[x, y, z]`.
pub type Voxel = [usize; 3];

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("voxel {0:?} lies outside a volume of dims {1:?}")]
    OutOfBounds(Voxel, [usize; 3]),
    #[error("object id {0} is listed in the manifest but absent from the grid")]
    MissingObject(u64),
    #[error("object id 0 is reserved for background")]
    BackgroundObject,
    #[error("resolution must be strictly positive, got {0:?}")]
    BadResolution([f64; 3]),
    #[error("dims {0:?} do not match a payload of {1} voxels")]
    DimsMismatch([usize; 3], usize),
}

/// Physical edge length of one voxel along each axis, in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct VoxelResolution<T> {
    pub dx: T,
    pub dy: T,
    pub dz: T,
}

impl<T: Real> VoxelResolution<T> {
    pub fn new(dx: T, dy: T, dz: T) -> Result<Self, VolumeError> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if ok(dx) && ok(dy) && ok(dz) {
            Ok(Self { dx, dy, dz })
        } else {
            Err(VolumeError::BadResolution([dx.as_f64(), dy.as_f64(), dz.as_f64()]))
        }
    }

    pub fn pitch(&self) -> [T; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn min_pitch(&self) -> T {
        self.dx.min(self.dy).min(self.dz)
    }

    /// Volume of one voxel in cubic microns.
    pub fn voxel_volume_um3(&self) -> T {
        self.dx * self.dy * self.dz * T::lit(1e-9)
    }

    /// Physical center of a voxel.
    pub fn center(&self, v: Voxel) -> Point<T> {
        let h = T::lit(0.5);
        [
            (T::from_count(v[0]) + h) * self.dx,
            (T::from_count(v[1]) + h) * self.dy,
            (T::from_count(v[2]) + h) * self.dz,
        ]
    }

    /// Voxel whose cell contains the point, clamped into `dims`.
    pub fn voxel_of(&self, p: Point<T>, dims: [usize; 3]) -> Voxel {
        let pitch = self.pitch();
        let mut v = [0usize; 3];
        for k in 0..3 {
            let idx = (p[k] / pitch[k]).floor();
            let idx = if idx < T::zero() { 0 } else { idx.to_usize().unwrap_or(usize::MAX) };
            v[k] = idx.min(dims[k] - 1);
        }
        v
    }

    pub fn cast<U: Real>(&self) -> VoxelResolution<U> {
        VoxelResolution { dx: U::lit(self.dx.as_f64()), dy: U::lit(self.dy.as_f64()), dz: U::lit(self.dz.as_f64()) }
    }
}

/// Serial-section default: 3 x 3 x 30 nm.
impl<T: Real> Default for VoxelResolution<T> {
    fn default() -> Self {
        Self { dx: T::lit(3.0), dy: T::lit(3.0), dz: T::lit(30.0) }
    }
}

/// Dense 3D grid of `V` with a physical resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<V, T> {
    dims: [usize; 3],
    data: Vec<V>,
    resolution: VoxelResolution<T>,
}

/// Object-id grid.
pub type LabelVolume<T> = Grid<u64, T>;

/// Per-voxel probabilities, e.g. a membrane map.
pub type ProbabilityGrid<T> = Grid<T, T>;

impl<V: Copy, T: Real> Grid<V, T> {
    pub fn filled(dims: [usize; 3], value: V, resolution: VoxelResolution<T>) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self { dims, data: vec![value; n], resolution }
    }

    pub fn from_vec(
        dims: [usize; 3],
        data: Vec<V>,
        resolution: VoxelResolution<T>,
    ) -> Result<Self, VolumeError> {
        let n = dims[0].checked_mul(dims[1]).and_then(|n| n.checked_mul(dims[2]));
        if n != Some(data.len()) || data.is_empty() {
            return Err(VolumeError::DimsMismatch(dims, data.len()));
        }
        Ok(Self { dims, data, resolution })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> &VoxelResolution<T> {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[V] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [V] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<V> {
        self.data
    }

    #[inline]
    pub fn index(&self, v: Voxel) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn voxel(&self, index: usize) -> Voxel {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn contains(&self, v: Voxel) -> bool {
        v[0] < self.dims[0] && v[1] < self.dims[1] && v[2] < self.dims[2]
    }

    #[inline]
    pub fn get(&self, v: Voxel) -> V {
        self.data[self.index(v)]
    }

    #[inline]
    pub fn set(&mut self, v: Voxel, value: V) {
        let i = self.index(v);
        self.data[i] = value;
    }

    /// Neighbor of `v` displaced by `off`, if it stays inside the grid.
    #[inline]
    pub fn offset(&self, v: Voxel, off: [isize; 3]) -> Option<Voxel> {
        let mut out = [0usize; 3];
        for k in 0..3 {
            let c = v[k] as isize + off[k];
            if c < 0 || c as usize >= self.dims[k] {
                return None;
            }
            out[k] = c as usize;
        }
        Some(out)
    }

    /// Copy of the voxels covered by `window`, with resolution preserved.
    pub fn crop(&self, window: &Window) -> Self {
        let ext = window.extent();
        let mut data = Vec::with_capacity(ext[0] * ext[1] * ext[2]);
        for z in window.lo[2]..window.hi[2] {
            for y in window.lo[1]..window.hi[1] {
                let row = self.index([window.lo[0], y, z]);
                data.extend_from_slice(&self.data[row..row + ext[0]]);
            }
        }
        Self { dims: ext, data, resolution: self.resolution }
    }
}

impl<T: Real> LabelVolume<T> {
    /// Sorted, de-duplicated non-background ids present in the grid.
    pub fn label_set(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.data.iter().copied().filter(|&l| l != BACKGROUND).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn max_label(&self) -> u64 {
        self.data.iter().copied().max().unwrap_or(BACKGROUND)
    }

    /// Voxels of `id`, in storage order.
    pub fn voxels_of(&self, id: u64) -> Vec<Voxel> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| self.voxel(i))
            .collect()
    }

    /// Voxels of every id inside the window, keyed by id, in storage order.
    pub fn voxels_in_window(&self, window: &Window) -> BTreeMap<u64, Vec<Voxel>> {
        let mut out: BTreeMap<u64, Vec<Voxel>> = BTreeMap::new();
        for z in window.lo[2]..window.hi[2] {
            for y in window.lo[1]..window.hi[1] {
                for x in window.lo[0]..window.hi[0] {
                    let l = self.get([x, y, z]);
                    if l != BACKGROUND {
                        out.entry(l).or_default().push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    /// Per-object statistics for every manifest entry.
    pub fn object_records(
        &self,
        entries: &[ObjectEntry],
    ) -> Result<Vec<ObjectRecord<T>>, VolumeError> {
        struct Acc<T> {
            count: usize,
            sum: [T; 3],
            lo: Voxel,
            hi: Voxel,
        }
        let mut acc: HashMap<u64, Acc<T>> = HashMap::new();
        for (i, &l) in self.data.iter().enumerate() {
            if l == BACKGROUND {
                continue;
            }
            let v = self.voxel(i);
            let c = self.resolution.center(v);
            let a = acc.entry(l).or_insert(Acc { count: 0, sum: [T::zero(); 3], lo: v, hi: v });
            a.count += 1;
            for k in 0..3 {
                a.sum[k] = a.sum[k] + c[k];
                a.lo[k] = a.lo[k].min(v[k]);
                a.hi[k] = a.hi[k].max(v[k]);
            }
        }
        let vv = self.resolution.voxel_volume_um3();
        entries
            .iter()
            .map(|e| {
                if e.id == BACKGROUND {
                    return Err(VolumeError::BackgroundObject);
                }
                let a = acc.get(&e.id).ok_or(VolumeError::MissingObject(e.id))?;
                let n = T::from_count(a.count);
                Ok(ObjectRecord {
                    id: e.id,
                    symbol: e.symbol,
                    group_id: e.group_id,
                    voxel_count: a.count,
                    volume_um3: n * vv,
                    centroid: [a.sum[0] / n, a.sum[1] / n, a.sum[2] / n],
                    bbox: BoundingBox { lo: a.lo, hi: a.hi },
                })
            })
            .collect()
    }
}

/// Voxel adjacency used for components and contact tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Face neighbors only.
    Face6,
    /// Full 3x3x3 neighborhood.
    Full26,
    /// 8-neighborhood in-plane plus face neighbors across z.
    #[default]
    Anisotropic,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dx, dy, dz) == (0, 0, 0) {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Face6 => manhattan == 1,
                        Connectivity::Full26 => true,
                        Connectivity::Anisotropic => dz == 0 || (dx == 0 && dy == 0),
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Half of the offsets: one of each `(o, -o)` pair.
    pub fn forward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets().into_iter().filter(|o| (o[2], o[1], o[0]) > (0, 0, 0)).collect()
    }
}

/// Axis-aligned inclusive voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Voxel,
    pub hi: Voxel,
}

/// One reconstructed fragment as listed in a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: u64,
    pub symbol: GrammarSymbol,
    pub group_id: u64,
}

/// Manifest entry plus voxel statistics measured on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord<T> {
    pub id: u64,
    pub symbol: GrammarSymbol,
    pub group_id: u64,
    pub voxel_count: usize,
    pub volume_um3: T,
    pub centroid: Point<T>,
    pub bbox: BoundingBox,
}

impl<T> ObjectRecord<T> {
    pub fn entry(&self) -> ObjectEntry {
        ObjectEntry { id: self.id, symbol: self.symbol, group_id: self.group_id }
    }
}

/// Annotated synapse joining a spine to an axon-side object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SynapseRecord<T> {
    pub id: u64,
    pub centroid: Point<T>,
    pub spine_id: u64,
    pub axon_side_id: u64,
}

/// Sidecar metadata for a label volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Manifest<T> {
    pub objects: Vec<ObjectEntry>,
    pub synapses: Vec<SynapseRecord<T>>,
    #[serde(default)]
    pub provenance: String,
}

impl<T: Real> Manifest<T> {
    pub fn object(&self, id: u64) -> Option<&ObjectEntry> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn objects_by_id(&self) -> BTreeMap<u64, ObjectEntry> {
        self.objects.iter().map(|o| (o.id, *o)).collect()
    }

    pub fn synapse_of_spine(&self, spine_id: u64) -> Option<&SynapseRecord<T>> {
        self.synapses.iter().find(|s| s.spine_id == spine_id)
    }
}

/// Voxel box centered on a voxel, clipped to the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub center: Voxel,
    pub half_extent: [usize; 3],
    /// Inclusive lower corner.
    pub lo: Voxel,
    /// Exclusive upper corner.
    pub hi: Voxel,
}

impl Window {
    pub fn new(center: Voxel, half_extent: [usize; 3], dims: [usize; 3]) -> Result<Self, VolumeError> {
        if (0..3).any(|k| center[k] >= dims[k]) {
            return Err(VolumeError::OutOfBounds(center, dims));
        }
        let lo = [0, 1, 2].map(|k| center[k].saturating_sub(half_extent[k]));
        let hi = [0, 1, 2].map(|k| (center[k] + half_extent[k] + 1).min(dims[k]));
        Ok(Self { center, half_extent, lo, hi })
    }

    /// Window covering a whole volume.
    pub fn full(dims: [usize; 3]) -> Self {
        Self { center: dims.map(|d| d / 2), half_extent: dims, lo: [0; 3], hi: dims }
    }

    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.hi[k] - self.lo[k])
    }

    pub fn contains(&self, v: Voxel) -> bool {
        (0..3).all(|k| v[k] >= self.lo[k] && v[k] < self.hi[k])
    }

    pub fn intersects(&self, bbox: &BoundingBox) -> bool {
        (0..3).all(|k| bbox.lo[k] < self.hi[k] && bbox.hi[k] >= self.lo[k])
    }
}

/// Physical half-extent of the synapse-centered window, converted per volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct WindowSpec<T> {
    pub half_extent_nm: Point<T>,
}

impl<T: Real> Default for WindowSpec<T> {
    /// 350 x 350 x 70 voxels at 3 x 3 x 30 nm, i.e. a 700 x 700 x 140 cuboid.
    fn default() -> Self {
        Self { half_extent_nm: [T::lit(1050.0), T::lit(1050.0), T::lit(2100.0)] }
    }
}

impl<T: Real> WindowSpec<T> {
    pub fn half_extent_voxels(&self, resolution: &VoxelResolution<T>) -> [usize; 3] {
        let p = resolution.pitch();
        [0, 1, 2].map(|k| (self.half_extent_nm[k] / p[k]).round().to_usize().unwrap_or(0))
    }

    pub fn window_at(&self, center: Voxel, dims: [usize; 3], resolution: &VoxelResolution<T>) -> Result<Window, VolumeError> {
        Window::new(center, self.half_extent_voxels(resolution), dims)
    }
}

/// Crop a window of `half_extent` voxels around `center`, clipped at the boundary.
pub fn crop_window<T: Real>(
    volume: &LabelVolume<T>,
    center: Voxel,
    half_extent: [usize; 3],
) -> Result<LabelVolume<T>, VolumeError> {
    let window = Window::new(center, half_extent, volume.dims())?;
    Ok(volume.crop(&window))
}

/// Maximal connected voxel sets of `id`.
///
/// Components are ordered by their first voxel in storage order; voxels inside
/// each component are in storage order too. An absent id yields no components.
pub fn connected_components<T: Real>(
    volume: &LabelVolume<T>,
    id: u64,
    connectivity: Connectivity,
) -> Vec<Vec<Voxel>> {
    let offsets = connectivity.offsets();
    let mut seen = vec![false; volume.len()];
    let mut out = Vec::new();
    for start in 0..volume.len() {
        if seen[start] || volume.as_slice()[start] != id {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let v = volume.voxel(i);
            comp.push(i);
            for &o in &offsets {
                if let Some(n) = volume.offset(v, o) {
                    let j = volume.index(n);
                    if !seen[j] && volume.as_slice()[j] == id {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp.into_iter().map(|i| volume.voxel(i)).collect());
    }
    out
}

/// Whether any voxel of `a` neighbors a voxel of `b` under `connectivity`.
pub fn touches<T: Real>(volume: &LabelVolume<T>, a: u64, b: u64, connectivity: Connectivity) -> bool {
    let offsets = connectivity.offsets();
    volume.as_slice().iter().enumerate().any(|(i, &l)| {
        l == a
            && offsets.iter().any(|&o| {
                volume.offset(volume.voxel(i), o).is_some_and(|n| volume.get(n) == b)
            })
    })
}

/// Unordered pairs of distinct non-background ids that touch somewhere.
pub fn adjacent_pairs<T: Real>(
    volume: &LabelVolume<T>,
    connectivity: Connectivity,
) -> std::collections::BTreeSet<(u64, u64)> {
    let offsets = connectivity.forward_offsets();
    let mut pairs = std::collections::BTreeSet::new();
    for (i, &l) in volume.as_slice().iter().enumerate() {
        if l == BACKGROUND {
            continue;
        }
        let v = volume.voxel(i);
        for &o in &offsets {
            if let Some(n) = volume.offset(v, o) {
                let m = volume.get(n);
                if m != BACKGROUND && m != l {
                    pairs.insert((l.min(m), l.max(m)));
                }
            }
        }
    }
    pairs
}

/// Voxels of a set that have a face neighbor outside the set.
///
/// The closest pair between two disjoint voxel sets always involves such voxels.
pub fn shell(voxels: &[Voxel]) -> Vec<Voxel> {
    let set: std::collections::HashSet<Voxel> = voxels.iter().copied().collect();
    voxels
        .iter()
        .copied()
        .filter(|v| {
            Connectivity::Face6.offsets().iter().any(|o| {
                let n = [0, 1, 2].map(|k| v[k] as isize + o[k]);
                n.iter().any(|&c| c < 0) || !set.contains(&n.map(|c| c as usize))
            })
        })
        .collect()
}

/// Minimum center-to-center distance between two voxel sets, in nm.
///
/// Evaluated in integer offsets so that swapping the arguments gives the
/// identical value. `None` if either set is empty.
pub fn set_distance<T: Real>(a: &[Voxel], b: &[Voxel], resolution: &VoxelResolution<T>) -> Option<T> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let sa = shell(a);
    let sb = shell(b);
    let w = resolution.pitch().map(|p| p * p);
    let mut best = T::infinity();
    for p in &sa {
        for q in &sb {
            let d = |k: usize| {
                let diff = p[k].abs_diff(q[k]);
                T::from_count(diff * diff)
            };
            let d2 = w[0] * d(0) + w[1] * d(1) + w[2] * d(2);
            if d2 < best {
                best = d2;
            }
        }
    }
    Some(best.sqrt())
}

/// Minimum distance from a point to any voxel center of a set, in nm.
pub fn point_set_distance<T: Real>(p: Point<T>, set: &[Voxel], resolution: &VoxelResolution<T>) -> Option<T> {
    set.iter()
        .map(|&v| crate::scalar::dist2(p, resolution.center(v)))
        .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))))
        .map(|d| d.sqrt())
}

/// Minimum anisotropic distance between voxel centers of two objects inside a window.
///
/// Returns `None` when either object has no voxel in the window. Abutting
/// voxels along x are `dx` apart.
pub fn surface_distance<T: Real>(
    volume: &LabelVolume<T>,
    id_a: u64,
    id_b: u64,
    window: &Window,
) -> Option<T> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for z in window.lo[2]..window.hi[2] {
        for y in window.lo[1]..window.hi[1] {
            for x in window.lo[0]..window.hi[0] {
                let l = volume.get([x, y, z]);
                if l == id_a {
                    a.push([x, y, z]);
                }
                if l == id_b {
                    b.push([x, y, z]);
                }
            }
        }
    }
    set_distance(&a, &b, volume.resolution())
}
