//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use occdiff_core::geometry::{closest_point_on_triangle, TriangleMesh};
use occdiff_core::isoext::{marching_cubes, OccupancyField, ScalarGrid};
use occdiff_core::geometry::Aabb;
use occdiff_core::{Point3, Vec3};

/// Inside/outside labels from a voxel flood fill.
///
/// Voxels whose centre lies within half a voxel diagonal of any triangle are
/// walls, which covers every voxel the surface touches. Everything the fill
/// from a corner cannot reach through face-adjacent free voxels is inside.
pub struct VoxelOracle {
    pub res: usize,
    pub min: Point3,
    pub size: f64,
    wall: Vec<bool>,
    outside: Vec<bool>,
}

impl VoxelOracle {
    pub fn new(mesh: &TriangleMesh, res: usize, bounds: &Aabb) -> Self {
        let span = bounds.extent().max();
        let size = span / res as f64;
        let min = bounds.min;
        let idx = |i: usize, j: usize, k: usize| i + res * (j + res * k);
        let mut wall = vec![false; res * res * res];
        let half_diag = 0.5 * size * 3f64.sqrt();
        for [a, b, c] in mesh.triangles() {
            let lo = a.coords.inf(&b.coords).inf(&c.coords).add_scalar(-half_diag);
            let hi = a.coords.sup(&b.coords).sup(&c.coords).add_scalar(half_diag);
            let cell = |x: f64, m: f64| (((x - m) / size).floor().max(0.0) as usize).min(res - 1);
            let (i0, i1) = (cell(lo.x, min.x), cell(hi.x, min.x));
            let (j0, j1) = (cell(lo.y, min.y), cell(hi.y, min.y));
            let (k0, k1) = (cell(lo.z, min.z), cell(hi.z, min.z));
            for k in k0..=k1 {
                for j in j0..=j1 {
                    for i in i0..=i1 {
                        let p = min + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * size;
                        if (closest_point_on_triangle(&p, &a, &b, &c) - p).norm() <= half_diag {
                            wall[idx(i, j, k)] = true;
                        }
                    }
                }
            }
        }
        let mut outside = vec![false; res * res * res];
        let mut queue = VecDeque::new();
        assert!(!wall[0], "flood fill seed must be free space");
        outside[0] = true;
        queue.push_back((0usize, 0usize, 0usize));
        while let Some((i, j, k)) = queue.pop_front() {
            let mut visit = |i: usize, j: usize, k: usize| {
                let id = idx(i, j, k);
                if !wall[id] && !outside[id] {
                    outside[id] = true;
                    queue.push_back((i, j, k));
                }
            };
            if i > 0 { visit(i - 1, j, k) }
            if i + 1 < res { visit(i + 1, j, k) }
            if j > 0 { visit(i, j - 1, k) }
            if j + 1 < res { visit(i, j + 1, k) }
            if k > 0 { visit(i, j, k - 1) }
            if k + 1 < res { visit(i, j, k + 1) }
        }
        VoxelOracle { res, min, size, wall, outside }
    }

    pub fn diagonal(&self) -> f64 {
        self.size * 3f64.sqrt()
    }

    /// `None` for points in wall voxels or outside the grid.
    pub fn label(&self, p: &Point3) -> Option<u8> {
        let c = (p - self.min) / self.size;
        if c.iter().any(|&v| v < 0.0 || v >= self.res as f64) {
            return None;
        }
        let (i, j, k) = (c.x as usize, c.y as usize, c.z as usize);
        let id = i + self.res * (j + self.res * k);
        if self.wall[id] {
            None
        } else {
            Some(u8::from(!self.outside[id]))
        }
    }
}

fn nearest_sq(p: &Point3, set: &[Point3]) -> f64 {
    set.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min)
}

pub fn brute_cd_l1(a: &[Point3], b: &[Point3]) -> f64 {
    let dir = |x: &[Point3], y: &[Point3]| x.iter().map(|p| nearest_sq(p, y).sqrt()).sum::<f64>() / x.len() as f64;
    0.5 * (dir(a, b) + dir(b, a))
}

pub fn brute_cd_l2(a: &[Point3], b: &[Point3]) -> f64 {
    let dir = |x: &[Point3], y: &[Point3]| x.iter().map(|p| nearest_sq(p, y)).sum::<f64>() / x.len() as f64;
    dir(a, b) + dir(b, a)
}

pub fn brute_f_score(pred: &[Point3], gt: &[Point3], d: f64) -> f64 {
    let frac = |x: &[Point3], y: &[Point3]| x.iter().filter(|p| nearest_sq(p, y).sqrt() <= d).count() as f64 / x.len() as f64;
    let (p, r) = (frac(pred, gt), frac(gt, pred));
    if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
}

/// Dense lattice evaluation followed by marching cubes.
pub fn dense_extract(field: &dyn OccupancyField, res: usize, bounds: Aabb) -> (TriangleMesh, usize) {
    let n = res + 1;
    let grid = ScalarGrid::new([n; 3], bounds, vec![0.0; n * n * n]).unwrap();
    let mut pts = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                pts.push(grid.position(i, j, k));
            }
        }
    }
    let values = field.probabilities(&pts).unwrap();
    let grid = ScalarGrid::new([n; 3], bounds, values).unwrap();
    (marching_cubes(&grid, field.threshold()), pts.len())
}

/// Vertices sorted lexicographically.
pub fn canonical_vertices(mesh: &TriangleMesh) -> Vec<[f64; 3]> {
    let mut v: Vec<[f64; 3]> = mesh.vertices().iter().map(|p| [p.x, p.y, p.z]).collect();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    v
}

/// Largest coordinate gap between two vertex lists of equal length.
pub fn max_vertex_gap(a: &[[f64; 3]], b: &[[f64; 3]]) -> Option<f64> {
    (a.len() == b.len()).then(|| {
        a.iter().zip(b).map(|(x, y)| (0..3).map(|i| (x[i] - y[i]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
    })
}
