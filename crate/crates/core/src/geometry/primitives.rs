//! Closed reference shapes used by the generator and by tests.

use std::f64::consts::PI;

use super::TriangleMesh;
use crate::{Point3, Vec3};

/// Fan-triangulates convex polygons (counter-clockwise seen from outside).
pub fn from_convex_polygons(vertices: Vec<Point3>, polygons: &[Vec<u32>]) -> TriangleMesh {
    let mut faces = Vec::new();
    for poly in polygons {
        for k in 1..poly.len() - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("polygon indices are in range")
}

/// Axis-aligned box with corner `min` and side lengths `size`.
pub fn box_mesh(min: Point3, size: Vec3) -> TriangleMesh {
    let vertices = (0..8)
        .map(|i| {
            Point3::new(
                min.x + if i & 1 != 0 { size.x } else { 0.0 },
                min.y + if i & 2 != 0 { size.y } else { 0.0 },
                min.z + if i & 4 != 0 { size.z } else { 0.0 },
            )
        })
        .collect();
    let quads = [
        vec![0, 2, 3, 1],
        vec![4, 5, 7, 6],
        vec![0, 1, 5, 4],
        vec![2, 6, 7, 3],
        vec![0, 4, 6, 2],
        vec![1, 3, 7, 5],
    ];
    from_convex_polygons(vertices, &quads)
}

/// Unit cube centered at the origin.
pub fn unit_cube() -> TriangleMesh {
    box_mesh(Point3::new(-0.5, -0.5, -0.5), Vec3::new(1.0, 1.0, 1.0))
}

/// Latitude/longitude sphere with `rings` latitude bands and `segments`
/// longitude slices.
pub fn uv_sphere(center: Point3, radius: f64, rings: u32, segments: u32) -> TriangleMesh {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices = vec![center + Vec3::new(0.0, 0.0, radius)];
    for r in 1..rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(center + radius * Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
        }
    }
    let south = vertices.len() as u32;
    vertices.push(center - Vec3::new(0.0, 0.0, radius));

    let ring = |r: u32, s: u32| 1 + (r - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings - 1 {
        for s in 0..segments {
            let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    TriangleMesh::new(vertices, faces).expect("sphere indices are in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_closed_and_outward() {
        let s = uv_sphere(Point3::origin(), 1.0, 24, 48);
        assert!(s.is_watertight());
        assert_eq!(s.euler_characteristic(), 2);
        let v = s.signed_volume();
        assert!(v > 0.0 && (v - 4.0 / 3.0 * PI).abs() < 0.05);
    }

    #[test]
    fn box_volume_matches_sides() {
        let b = box_mesh(Point3::new(1.0, 2.0, 3.0), Vec3::new(2.0, 3.0, 0.5));
        assert!(b.is_watertight());
        assert!((b.signed_volume() - 3.0).abs() < 1e-12);
    }
}
