//! Flat binary array files with a one-line text header.
//!
//! Layout: `OCCPTS count=<rows> dims=<cols> sha256=<hex>\n` followed by
//! `rows * cols` little-endian `f32` values. The checksum covers the payload.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::geometry::OccupancySample;
use crate::{Error, Point3, Result};

const MAGIC: &str = "OCCPTS";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_array(values: &[f32], dims: usize) -> Vec<u8> {
    assert!(dims > 0 && values.len() % dims == 0);
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let mut out = format!("{MAGIC} count={} dims={dims} sha256={}\n", values.len() / dims, sha256_hex(&payload)).into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Decodes an array file, returning `(values, dims)`.
pub fn decode_array(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, usize)> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::parse(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::parse(path, "header is not utf-8"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(MAGIC) {
        return Err(Error::parse(path, "bad magic"));
    }
    let (mut count, mut dims, mut sum) = (None, None, None);
    for f in fields {
        match f.split_once('=') {
            Some(("count", v)) => count = v.parse::<usize>().ok(),
            Some(("dims", v)) => dims = v.parse::<usize>().ok(),
            Some(("sha256", v)) => sum = Some(v.to_string()),
            _ => return Err(Error::parse(path, format!("unknown header field {f}"))),
        }
    }
    let (count, dims, sum) = match (count, dims, sum) {
        (Some(c), Some(d), Some(s)) if d > 0 => (c, d, s),
        _ => return Err(Error::parse(path, "header needs count, dims and sha256")),
    };
    let payload = &bytes[nl + 1..];
    if payload.len() != count * dims * 4 {
        return Err(Error::parse(path, format!("payload has {} bytes, header implies {}", payload.len(), count * dims * 4)));
    }
    let actual = sha256_hex(payload);
    if actual != sum {
        return Err(Error::Checksum { path: path.to_path_buf(), expected: sum, actual });
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((values, dims))
}

pub fn write_array(path: &Path, values: &[f32], dims: usize) -> Result<()> {
    std::fs::write(path, encode_array(values, dims)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<(Vec<f32>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes, path)
}

pub fn write_points(path: &Path, points: &[Point3]) -> Result<()> {
    let flat: Vec<f32> = points.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
    write_array(path, &flat, 3)
}

pub fn read_points(path: &Path) -> Result<Vec<Point3>> {
    let (v, dims) = read_array(path)?;
    if dims != 3 {
        return Err(Error::parse(path, format!("expected 3 dims, found {dims}")));
    }
    Ok(v.chunks_exact(3).map(|c| Point3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect())
}

/// Occupancy samples are stored as rows `(x, y, z, value)`.
pub fn write_occupancy(path: &Path, sample: &OccupancySample) -> Result<()> {
    let flat: Vec<f32> = sample
        .positions
        .iter()
        .zip(&sample.values)
        .flat_map(|(p, &v)| [p.x as f32, p.y as f32, p.z as f32, v as f32])
        .collect();
    write_array(path, &flat, 4)
}

pub fn read_occupancy(path: &Path) -> Result<OccupancySample> {
    let (v, dims) = read_array(path)?;
    if dims != 4 {
        return Err(Error::parse(path, format!("expected 4 dims, found {dims}")));
    }
    let mut positions = Vec::with_capacity(v.len() / 4);
    let mut values = Vec::with_capacity(v.len() / 4);
    for row in v.chunks_exact(4) {
        positions.push(Point3::new(row[0] as f64, row[1] as f64, row[2] as f64));
        values.push(match row[3] {
            0.0 => 0,
            1.0 => 1,
            other => return Err(Error::parse(path, format!("non-binary occupancy value {other}"))),
        });
    }
    OccupancySample::new(positions, values)
}
