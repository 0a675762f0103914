use std::collections::HashMap;

use super::tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use crate::geometry::{Aabb, TriangleMesh};
use crate::{Error, Point3, Result, Vec3};

/// Scalar samples on a regular lattice spanning `bounds`, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    dims: [usize; 3],
    bounds: Aabb,
    values: Vec<f64>,
}

impl ScalarGrid {
    /// `dims` counts lattice points per axis (cells + 1).
    pub fn new(dims: [usize; 3], bounds: Aabb, values: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument(format!("lattice dims {dims:?} need at least 2 points per axis")));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidArgument(format!("{} values for lattice {dims:?}", values.len())));
        }
        Ok(ScalarGrid { dims, bounds, values })
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(dims: [usize; 3], bounds: Aabb, f: impl Fn(&Point3) -> f64) -> Result<Self> {
        let probe = ScalarGrid { dims, bounds, values: Vec::new() };
        let mut values = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&probe.position(i, j, k)));
                }
            }
        }
        ScalarGrid::new(dims, bounds, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Point3 {
        let e = self.bounds.extent();
        let t = |n: usize, d: usize| n as f64 / (d - 1) as f64;
        self.bounds.min
            + Vec3::new(e.x * t(i, self.dims[0]), e.y * t(j, self.dims[1]), e.z * t(k, self.dims[2]))
    }
}

/// Extracts the `threshold` level set; values above it are inside.
///
/// Crossing vertices are linearly interpolated along lattice edges and shared
/// between neighbouring cells, so closed level sets come out as closed meshes
/// with outward-facing triangles.
pub fn marching_cubes(grid: &ScalarGrid, threshold: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                let mut corner_values = [0.0; 8];
                for (c, off) in CORNER_OFFSETS.iter().enumerate() {
                    let v = grid.value(i + off[0], j + off[1], k + off[2]);
                    corner_values[c] = v;
                    if v > threshold {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [ca, cb] = EDGE_CORNERS[e as usize];
                        let (oa, ob) = (CORNER_OFFSETS[ca], CORNER_OFFSETS[cb]);
                        // orient every edge from its lower lattice point so that
                        // neighbouring cells compute bit-identical vertices
                        let (lo, hi, vlo, vhi) =
                            if oa <= ob { (oa, ob, corner_values[ca], corner_values[cb]) } else { (ob, oa, corner_values[cb], corner_values[ca]) };
                        let axis = (0..3).find(|&d| lo[d] != hi[d]).expect("edge spans one axis") as u8;
                        let (li, lj, lk) = (i + lo[0], j + lo[1], k + lo[2]);
                        let key = (grid.index(li, lj, lk), axis);
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let pa = grid.position(li, lj, lk);
                            let pb = grid.position(i + hi[0], j + hi[1], k + hi[2]);
                            let t = ((threshold - vlo) / (vhi - vlo)).clamp(0.0, 1.0);
                            vertices.push(pa + (pb - pa) * t);
                            (vertices.len() - 1) as u32
                        });
                    }
                    // the table winds triangles with normals pointing toward
                    // the set corners; flip for outward (field-decreasing) normals
                    faces.push([ids[0], ids[2], ids[1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces).expect("vertex ids are generated in range")
}
