//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point types the geometry, features and forest are written against.
///
/// Implemented automatically for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + FromStr
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count or index.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + Default
        + Sum
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + FromStr
        + 'static
{
}

/// A physical point or direction in nanometers.
pub type Point<T> = [T; 3];

/// Serde adapter for float vectors that may hold infinities or NaN.
///
/// Finite values stay JSON numbers; the rest are written as the strings
/// `"inf"`, `"-inf"` and `"NaN"`.
pub mod nonfinite_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Real;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Entry<T> {
        Num(T),
        Text(String),
    }

    pub fn serialize<T: Real, S: Serializer>(values: &[T], s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry<T>> =
            values.iter().map(|&v| if v.is_finite() { Entry::Num(v) } else { Entry::Text(v.to_string()) }).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
        let entries: Vec<Entry<T>> = Vec::deserialize(d)?;
        entries
            .into_iter()
            .map(|e| match e {
                Entry::Num(v) => Ok(v),
                Entry::Text(t) => t.parse::<T>().map_err(|_| serde::de::Error::custom(format!("not a number: {t}"))),
            })
            .collect()
    }
}

pub(crate) fn sub<T: Real>(a: Point<T>, b: Point<T>) -> Point<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot<T: Real>(a: Point<T>, b: Point<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm<T: Real>(a: Point<T>) -> T {
    dot(a, a).sqrt()
}

pub(crate) fn dist2<T: Real>(a: Point<T>, b: Point<T>) -> T {
    let d = sub(a, b);
    dot(d, d)
}

pub(crate) fn normalize<T: Real>(a: Point<T>) -> Option<Point<T>> {
    let n = norm(a);
    if n > T::zero() && n.is_finite() {
        Some([a[0] / n, a[1] / n, a[2] / n])
    } else {
        None
    }
}

/// Eigen decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching unit eigenvectors.
pub fn symmetric_eigen3<T: Real>(m: [[T; 3]; 3]) -> ([T; 3], [Point<T>; 3]) {
    let mut a = m;
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let vectors = order.map(|c| [v[0][c], v[1][c], v[2][c]]);
    (values, vectors)
}

/// Principal axis of a point cloud: dominant eigenvector of the covariance.
///
/// `None` when fewer than three points are given or the two largest
/// eigenvalues are within 10% of each other.
pub fn principal_axis<T: Real>(points: &[Point<T>]) -> Option<Point<T>> {
    if points.len() < 3 {
        return None;
    }
    let n = T::from_count(points.len());
    let mut mean = [T::zero(); 3];
    for p in points {
        for k in 0..3 {
            mean[k] = mean[k] + p[k];
        }
    }
    for m in mean.iter_mut() {
        *m = *m / n;
    }
    let mut cov = [[T::zero(); 3]; 3];
    for p in points {
        let d = sub(*p, mean);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = cov[i][j] + d[i] * d[j];
            }
        }
    }
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c = *c / n;
        }
    }
    let (values, vectors) = symmetric_eigen3(cov);
    if values[0] <= T::zero() || values[0] <= T::lit(1.1) * values[1] {
        return None;
    }
    normalize(vectors[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_diagonal() {
        let (vals, vecs) = symmetric_eigen3([[1.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 3.0]]);
        assert_eq!(vals, [5.0, 3.0, 1.0]);
        assert!((vecs[0][1].abs() - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = [[4.0f64, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]];
        let (vals, vecs) = symmetric_eigen3(m);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                assert!((r - m[i][j]).abs() < 1e-10, "({i},{j}) {r} vs {}", m[i][j]);
            }
        }
    }

    #[test]
    fn principal_axis_of_a_line() {
        let pts: Vec<Point<f32>> = (0..10).map(|i| [i as f32, 2.0 * i as f32, 0.0]).collect();
        let a = principal_axis(&pts).unwrap();
        let expect = [1.0 / 5f32.sqrt(), 2.0 / 5f32.sqrt(), 0.0];
        assert!(dot(a, expect).abs() > 0.9999);
    }

    #[test]
    fn nonfinite_values_survive_json() {
        #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
        struct W {
            #[serde(with = "nonfinite_vec")]
            v: Vec<f64>,
        }
        let w = W { v: vec![1.5, f64::INFINITY, f64::NEG_INFINITY, 0.1 + 0.2] };
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(text, r#"{"v":[1.5,"inf","-inf",0.30000000000000004]}"#);
        assert_eq!(serde_json::from_str::<W>(&text).unwrap(), w);
        assert!(serde_json::from_str::<W>(r#"{"v":["x"]}"#).is_err());
    }

    #[test]
    fn principal_axis_degenerate_cases() {
        let two: Vec<Point<f64>> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(principal_axis(&two).is_none());
        let square: Vec<Point<f64>> =
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(principal_axis(&square).is_none());
    }
}
