//! SNTG v1 grid files and their JSON manifests.
//!
//! Layout (little-endian): `SNTG`, u32 version, u32 nx, ny, nz,
//! 3 x f32 resolution in nm, u8 dtype, then nx*ny*nz values x-fastest.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Grid, LabelVolume, Manifest, ProbabilityGrid, VoxelResolution};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"SNTG";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 12 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    U64Labels = 1,
    F32Grid = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::U64Labels),
            2 => Some(DType::F32Grid),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::U64Labels => 8,
            DType::F32Grid => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic at byte 0: expected SNTG, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {version} at byte {offset}")]
    UnsupportedVersion { version: u32, offset: usize },
    #[error("truncated input at byte {offset}: need {needed} bytes, have {available}")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("dimension overflow at byte {offset}: {dims:?}")]
    DimensionOverflow { offset: usize, dims: [u32; 3] },
    #[error("invalid resolution at byte {offset}: {res:?}")]
    BadResolution { offset: usize, res: [f32; 3] },
    #[error("unknown dtype code {code} at byte {offset}")]
    UnknownDType { code: u8, offset: usize },
    #[error("dtype mismatch at byte {offset}: expected {expected:?}, found {found:?}")]
    WrongDType { offset: usize, expected: DType, found: DType },
    #[error("{extra} trailing bytes after payload at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("manifest {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

struct Header {
    dims: [usize; 3],
    res: [f32; 3],
    dtype: DType,
}

fn encode_header<T: Real>(dims: [usize; 3], res: &VoxelResolution<T>, dtype: DType, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in res.pitch() {
        out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    out.push(dtype as u8);
    out
}

fn take(bytes: &[u8], offset: usize, n: usize) -> Result<&[u8], FormatError> {
    bytes.get(offset..offset + n).ok_or(FormatError::Truncated {
        offset,
        needed: n,
        available: bytes.len().saturating_sub(offset),
    })
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(take(bytes, offset, 4)?.try_into().expect("4 bytes")))
}

fn decode_header(bytes: &[u8]) -> Result<Header, FormatError> {
    let magic: [u8; 4] = match bytes.get(0..4) {
        Some(m) => m.try_into().expect("4 bytes"),
        None => {
            return Err(FormatError::Truncated { offset: 0, needed: 4, available: bytes.len() })
        }
    };
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u32_at(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { version, offset: 4 });
    }
    let raw = [u32_at(bytes, 8)?, u32_at(bytes, 12)?, u32_at(bytes, 16)?];
    let total = raw
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(8));
    if raw.contains(&0) || total.is_none() {
        return Err(FormatError::DimensionOverflow { offset: 8, dims: raw });
    }
    let mut res = [0f32; 3];
    for (k, r) in res.iter_mut().enumerate() {
        *r = f32::from_le_bytes(take(bytes, 20 + 4 * k, 4)?.try_into().expect("4 bytes"));
    }
    if res.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(FormatError::BadResolution { offset: 20, res });
    }
    let code = take(bytes, 32, 1)?[0];
    let dtype = DType::from_code(code).ok_or(FormatError::UnknownDType { code, offset: 32 })?;
    Ok(Header { dims: raw.map(|d| d as usize), res, dtype })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, expected: DType) -> Result<&'a [u8], FormatError> {
    if header.dtype != expected {
        return Err(FormatError::WrongDType { offset: 32, expected, found: header.dtype });
    }
    let n = header.dims.iter().product::<usize>() * expected.width();
    let body = take(bytes, HEADER_LEN, n)?;
    let end = HEADER_LEN + n;
    if bytes.len() > end {
        return Err(FormatError::TrailingBytes { offset: end, extra: bytes.len() - end });
    }
    Ok(body)
}

fn resolution<T: Real>(res: [f32; 3]) -> VoxelResolution<T> {
    VoxelResolution { dx: T::lit(res[0] as f64), dy: T::lit(res[1] as f64), dz: T::lit(res[2] as f64) }
}

/// Serialize a label volume to SNTG bytes.
pub fn encode_volume<T: Real>(volume: &LabelVolume<T>) -> Vec<u8> {
    let mut out = encode_header(volume.dims(), volume.resolution(), DType::U64Labels, volume.len() * 8);
    for &l in volume.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_volume<T: Real>(bytes: &[u8]) -> Result<LabelVolume<T>, FormatError> {
    let header = decode_header(bytes)?;
    let body = payload(bytes, &header, DType::U64Labels)?;
    let data = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Grid { dims: header.dims, data, resolution: resolution(header.res) })
}

/// Serialize a probability grid; values are stored as f32.
pub fn encode_grid<T: Real>(grid: &ProbabilityGrid<T>) -> Vec<u8> {
    let mut out = encode_header(grid.dims(), grid.resolution(), DType::F32Grid, grid.len() * 4);
    for &v in grid.as_slice() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid<T: Real>(bytes: &[u8]) -> Result<ProbabilityGrid<T>, FormatError> {
    let header = decode_header(bytes)?;
    let body = payload(bytes, &header, DType::F32Grid)?;
    let data = body
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    Ok(Grid { dims: header.dims, data, resolution: resolution(header.res) })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

pub fn read_volume<T: Real>(path: impl AsRef<Path>) -> Result<LabelVolume<T>, FormatError> {
    decode_volume(&read_bytes(path.as_ref())?)
}

pub fn write_volume<T: Real>(volume: &LabelVolume<T>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_volume(volume))
}

pub fn read_grid<T: Real>(path: impl AsRef<Path>) -> Result<ProbabilityGrid<T>, FormatError> {
    decode_grid(&read_bytes(path.as_ref())?)
}

pub fn write_grid<T: Real>(grid: &ProbabilityGrid<T>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_bytes(path.as_ref(), &encode_grid(grid))
}

pub fn read_manifest<T: Real>(path: impl AsRef<Path>) -> Result<Manifest<T>, FormatError> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| FormatError::Json { path: path.display().to_string(), source })
}

pub fn write_manifest<T: Real>(manifest: &Manifest<T>, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut text = serde_json::to_vec_pretty(manifest)
        .map_err(|source| FormatError::Json { path: path.display().to_string(), source })?;
    text.push(b'\n');
    write_bytes(path, &text)
}
