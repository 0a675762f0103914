//! Wavefront OBJ (ASCII) mesh I/O and plain-text point cloud reading.

use std::fmt::Write as _;
use std::path::Path;

use super::TriangleMesh;
use crate::{Error, Point3, Result};

/// Serializes vertices and triangles. Floats use the shortest representation
/// that round-trips, so output is byte-stable for identical meshes.
pub fn to_obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices().len() + mesh.faces().len()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|msg| Error::parse(path, msg))
}

/// Parses `v` and `f` records; polygons are fan-triangulated, and `v/vt/vn`
/// and negative (relative) indices are accepted. Everything else is ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let xyz: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| format!("line {}: {e}", lineno + 1))?;
                if xyz.len() != 3 {
                    return Err(format!("line {}: vertex needs 3 coordinates", lineno + 1));
                }
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in tok {
                    let head = t.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|e| format!("line {}: {e}", lineno + 1))?;
                    let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if resolved < 0 {
                        return Err(format!("line {}: index {i} out of range", lineno + 1));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs at least 3 vertices", lineno + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| e.to_string())
}

/// Reads a point cloud: `.obj` files contribute their `v` records; any other
/// extension is parsed as one point per line with the first three numeric
/// columns (whitespace or comma separated) as coordinates.
pub fn read_point_cloud(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_obj = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"));
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let body = if is_obj {
            match line.strip_prefix("v ") {
                Some(rest) => rest,
                None => continue,
            }
        } else {
            line
        };
        let xyz: Vec<f64> = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .take(3)
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if xyz.len() < 3 {
            return Err(Error::parse(path, format!("line {}: expected 3 coordinates", lineno + 1)));
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::unit_cube;

    #[test]
    fn round_trip_is_exact() {
        let cube = unit_cube();
        let text = to_obj_string(&cube);
        let back = parse_obj(&text).unwrap();
        assert_eq!(back, cube);
        assert_eq!(to_obj_string(&back), text);
    }

    #[test]
    fn quads_and_slashes() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn bad_records_error() {
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 0 0 0\nv 0 0 0\nf 1 2 9\n").is_err());
    }
}
