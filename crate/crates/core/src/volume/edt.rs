//! Exact anisotropic Euclidean distance transform (separable lower envelope).

use super::Grid;
use crate::scalar::Real;

/// One pass of the parabola lower envelope along a line.
fn envelope_1d<T: Real>(f: &[T], weight: T, out: &mut [T], v: &mut Vec<usize>, z: &mut Vec<T>) {
    v.clear();
    z.clear();
    let n = f.len();
    let inf = T::infinity();
    let key = |q: usize| f[q] + weight * T::from_count(q * q);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(-inf);
                    break;
                }
                Some(&p) => {
                    let s = (key(q) - key(p)) / (T::lit(2.0) * weight * T::from_count(q - p));
                    if s <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = inf);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pt = T::from_count(p);
        while k + 1 < v.len() && z[k + 1] < pt {
            k += 1;
        }
        let d = p.abs_diff(v[k]);
        *o = f[v[k]] + weight * T::from_count(d * d);
    }
}

/// Squared physical distance from every voxel to the nearest voxel where
/// `is_site` holds; `+inf` everywhere if there is no site.
pub fn squared_distance_transform<V: Copy, T: Real>(
    grid: &Grid<V, T>,
    is_site: impl Fn(V) -> bool,
) -> Grid<T, T> {
    let [nx, ny, nz] = grid.dims();
    let pitch = grid.resolution().pitch();
    let mut d: Vec<T> = grid.as_slice().iter().map(|&x| if is_site(x) { T::zero() } else { T::infinity() }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut line = Vec::new();
    let mut out = Vec::new();
    let dims = [nx, ny, nz];
    let stride = [1, nx, nx * ny];
    for axis in 0..3 {
        let n = dims[axis];
        let w = pitch[axis] * pitch[axis];
        line.resize(n, T::zero());
        out.resize(n, T::zero());
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for i in 0..dims[a1] {
            for j in 0..dims[a2] {
                let base = i * stride[a1] + j * stride[a2];
                for (k, l) in line.iter_mut().enumerate() {
                    *l = d[base + k * stride[axis]];
                }
                envelope_1d(&line, w, &mut out, &mut v, &mut z);
                for (k, o) in out.iter().enumerate() {
                    d[base + k * stride[axis]] = *o;
                }
            }
        }
    }
    Grid { dims: grid.dims(), data: d, resolution: *grid.resolution() }
}
