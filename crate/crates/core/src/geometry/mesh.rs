use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result, Vec3};

/// Longest-axis extent of a normalized shape. Leaves a 0.05 margin inside the
/// `[-0.5, 0.5]³` query box so extracted surfaces never touch the grid border.
pub const NORMALIZED_EXTENT: f64 = 0.9;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    /// The normalized query domain `[-0.5, 0.5]³`.
    pub fn unit() -> Self {
        Aabb { min: Point3::new(-0.5, -0.5, -0.5), max: Point3::new(0.5, 0.5, 0.5) }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = Aabb { min: first, max: first };
        for p in iter {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Point3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }
}

/// Similarity transform mapping raw coordinates into the normalized box:
/// `normalized = (raw - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization { center: [0.0; 3], scale: 1.0 }
    }

    /// Centers `bounds` at the origin and scales its longest side to
    /// [`NORMALIZED_EXTENT`].
    pub fn fit(bounds: &Aabb) -> Result<Self> {
        let e = bounds.extent();
        let longest = e.x.max(e.y).max(e.z);
        if !(longest > 0.0 && longest.is_finite()) {
            return Err(Error::DegenerateMesh);
        }
        let c = bounds.center();
        Ok(Normalization { center: [c.x, c.y, c.z], scale: NORMALIZED_EXTENT / longest })
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from((p - Point3::from(self.center)) * self.scale)
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        Point3::from(p.coords / self.scale) + Vec3::from(self.center)
    }
}

/// Indexed triangle mesh.
///
/// `watertight` is computed at construction: it is true when every directed
/// edge `(a, b)` appears exactly once and its twin `(b, a)` exactly once,
/// i.e. the surface is closed and consistently oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[u32; 3]>,
    watertight: bool,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &idx in f {
                if idx as usize >= vertices.len() {
                    return Err(Error::BadFaceIndex { face: fi, index: idx, vertex_count: vertices.len() });
                }
            }
        }
        let watertight = !faces.is_empty() && open_edges(&faces).is_empty();
        Ok(TriangleMesh { vertices, faces, watertight })
    }

    pub fn empty() -> Self {
        TriangleMesh { vertices: Vec::new(), faces: Vec::new(), watertight: false }
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Directed edges lacking a unique opposite twin.
    pub fn open_edges(&self) -> Vec<(u32, u32)> {
        open_edges(&self.faces)
    }

    /// Errors with the offending edges unless the mesh is closed and oriented.
    pub fn require_watertight(&self) -> Result<()> {
        if self.watertight {
            return Ok(());
        }
        let open = self.open_edges();
        Err(Error::NotWatertight { count: open.len(), sample: open.into_iter().take(8).collect() })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Point3; 3]> + '_ {
        (0..self.faces.len()).map(move |i| self.triangle(i))
    }

    /// Area-weighted normal (length = 2 × area).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        let n = self.face_cross(face);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|i| self.face_area(i)).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward-facing
    /// orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles().map(|[a, b, c]| a.coords.dot(&b.coords.cross(&c.coords))).sum::<f64>() / 6.0
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    pub fn transformed(&self, t: &Normalization) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            faces: self.faces.clone(),
            watertight: self.watertight,
        }
    }

    /// Returns the mesh mapped into the normalized box and the transform used.
    pub fn normalized(&self) -> Result<(TriangleMesh, Normalization)> {
        let bb = self.bounds().ok_or(Error::DegenerateMesh)?;
        let t = Normalization::fit(&bb)?;
        Ok((self.transformed(&t), t))
    }

    /// Same surface with triangle winding reversed.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            watertight: self.watertight,
        }
    }

    /// Euler characteristic `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                used[a as usize] = true;
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - edges.len() as i64 + self.faces.len() as i64
    }
}

fn open_edges(faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut bad: Vec<(u32, u32)> = directed
        .iter()
        .filter(|(&(a, b), &n)| n != 1 || directed.get(&(b, a)).copied() != Some(1))
        .map(|(&e, _)| e)
        .collect();
    bad.sort_unstable();
    bad
}
