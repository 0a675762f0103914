use std::f64::consts::PI;

use super::TriangleMesh;
use crate::{Error, Point3, Result, Vec3};

/// Ground-truth occupancy: 1 inside the closed surface, 0 outside.
///
/// Uses the generalized winding number, which is exactly ±1 inside and 0
/// outside a closed oriented surface and does not suffer from the edge/vertex
/// degeneracies of ray parity. Points on the surface land on either side.
pub fn occupancy_query(mesh: &TriangleMesh, points: &[Point3]) -> Result<Vec<u8>> {
    mesh.require_watertight()?;
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidArgument(format!("query point {i} is not finite")));
            }
            Ok(u8::from(winding_number(mesh, p).abs() > 0.5))
        })
        .collect()
}

/// Sum of signed solid angles subtended by the mesh triangles at `p`, divided
/// by 4π.
pub fn winding_number(mesh: &TriangleMesh, p: &Point3) -> f64 {
    let mut total = 0.0;
    for [a, b, c] in mesh.triangles() {
        total += solid_angle(a - p, b - p, c - p);
    }
    total / (4.0 * PI)
}

/// Van Oosterom–Strackee signed solid angle of a triangle seen from the origin.
fn solid_angle(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let det = a.dot(&b.cross(&c));
    let denom = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
    2.0 * det.atan2(denom)
}

/// Closest point to `p` on triangle `(a, b, c)`.
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Unsigned distance from `p` to the nearest point of the surface.
pub fn distance_to_mesh(mesh: &TriangleMesh, p: &Point3) -> f64 {
    mesh.triangles()
        .map(|[a, b, c]| (closest_point_on_triangle(p, &a, &b, &c) - p).norm())
        .fold(f64::INFINITY, f64::min)
}
