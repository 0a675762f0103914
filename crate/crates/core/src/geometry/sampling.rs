use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{occupancy_query, Aabb, TriangleMesh};
use crate::{seeded_rng, Error, Point3, Result, Vec3};

/// Query positions with their binary occupancy labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySample {
    pub positions: Vec<Point3>,
    pub values: Vec<u8>,
}

impl OccupancySample {
    pub fn new(positions: Vec<Point3>, values: Vec<u8>) -> Result<Self> {
        if positions.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} occupancy values",
                positions.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("occupancy value {v} is not binary")));
        }
        Ok(OccupancySample { positions, values })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

/// How query points are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySampling {
    pub count: usize,
    /// Fraction of points drawn from the Gaussian band around the surface.
    pub mix: f64,
    /// Band standard deviation as a fraction of the mesh bounding-box diagonal.
    pub band_sigma: f64,
    /// Domain for the uniform part; band points are clamped into it.
    #[serde(skip, default = "Aabb::unit")]
    pub bounds: Aabb,
}

impl Default for QuerySampling {
    fn default() -> Self {
        QuerySampling { count: 1000, mix: 0.5, band_sigma: 0.05, bounds: Aabb::unit() }
    }
}

/// Draws labelled query points: a `mix` fraction jittered around the surface,
/// the rest uniform in the domain box.
pub fn sample_query_points(mesh: &TriangleMesh, cfg: &QuerySampling, seed: u64) -> Result<OccupancySample> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("query count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.mix) {
        return Err(Error::InvalidArgument(format!("mix {} outside [0, 1]", cfg.mix)));
    }
    mesh.require_watertight()?;
    let mut rng = seeded_rng(seed);
    let n_band = (cfg.count as f64 * cfg.mix).round() as usize;
    let mut positions = Vec::with_capacity(cfg.count);

    if n_band > 0 {
        let sigma = cfg.band_sigma * mesh.bounds().ok_or(Error::DegenerateMesh)?.diagonal();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let weights: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
        for (_, p) in sample_faces_weighted(mesh, &weights, n_band, &mut rng)? {
            let jitter = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            let q = p + jitter;
            positions.push(Point3::from(q.coords.zip_zip_map(&cfg.bounds.min.coords, &cfg.bounds.max.coords, |v, lo, hi| v.clamp(lo, hi))));
        }
    }
    let axes: Vec<Uniform<f64>> = (0..3)
        .map(|i| Uniform::new_inclusive(cfg.bounds.min[i], cfg.bounds.max[i]))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    while positions.len() < cfg.count {
        positions.push(Point3::new(axes[0].sample(&mut rng), axes[1].sample(&mut rng), axes[2].sample(&mut rng)));
    }
    let values = occupancy_query(mesh, &positions)?;
    OccupancySample::new(positions, values)
}

/// Area-weighted uniform samples on the surface.
pub fn sample_surface_points(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<Point3>> {
    if count == 0 {
        return Err(Error::InvalidArgument("surface sample count must be at least 1".into()));
    }
    let weights: Vec<f64> = (0..mesh.faces().len()).map(|f| mesh.face_area(f)).collect();
    let mut rng = seeded_rng(seed);
    Ok(sample_faces_weighted(mesh, &weights, count, &mut rng)?.into_iter().map(|(_, p)| p).collect())
}

/// Samples `count` surface points with face probability proportional to
/// `weights` and uniform placement inside each chosen face. Returns the face
/// index alongside each point.
pub fn sample_faces_weighted<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Point3)>> {
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateMesh);
    }
    let pick = WeightedIndex::new(weights).map_err(|_| Error::DegenerateMesh)?;
    Ok((0..count)
        .map(|_| {
            let f = pick.sample(rng);
            (f, point_in_triangle(mesh.triangle(f), rng.random(), rng.random()))
        })
        .collect())
}

/// Maps a unit-square sample to a uniform point in the triangle.
pub fn point_in_triangle([a, b, c]: [Point3; 3], mut u: f64, mut v: f64) -> Point3 {
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    a + (b - a) * u + (c - a) * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{box_mesh, unit_cube, uv_sphere};

    #[test]
    fn default_count_and_binary_labels() {
        let s = sample_query_points(&unit_cube(), &QuerySampling::default(), 1).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.values.iter().all(|&v| v <= 1));
        assert!(s.positions.iter().all(|p| Aabb::unit().contains(p, 0.0)));
    }

    #[test]
    fn same_seed_same_sample() {
        let cfg = QuerySampling::default();
        let m = uv_sphere(Point3::origin(), 0.3, 12, 24);
        assert_eq!(sample_query_points(&m, &cfg, 9).unwrap(), sample_query_points(&m, &cfg, 9).unwrap());
        assert_ne!(sample_query_points(&m, &cfg, 9).unwrap(), sample_query_points(&m, &cfg, 10).unwrap());
    }

    #[test]
    fn uniform_mix_estimates_volume() {
        // Box of volume 0.4 * 0.5 * 0.6 = 0.12 inside the unit domain.
        let m = box_mesh(Point3::new(-0.2, -0.25, -0.3), Vec3::new(0.4, 0.5, 0.6));
        let cfg = QuerySampling { count: 20_000, mix: 0.0, ..Default::default() };
        let s = sample_query_points(&m, &cfg, 3).unwrap();
        let p = 0.12;
        let sd = (p * (1.0 - p) / cfg.count as f64).sqrt();
        assert!((s.occupied_fraction() - p).abs() < 3.0 * sd, "{}", s.occupied_fraction());
    }

    #[test]
    fn invalid_arguments() {
        let m = unit_cube();
        assert!(sample_query_points(&m, &QuerySampling { count: 0, ..Default::default() }, 0).is_err());
        assert!(sample_query_points(&m, &QuerySampling { mix: 1.5, ..Default::default() }, 0).is_err());
        assert!(sample_surface_points(&m, 0, 0).is_err());
    }

    #[test]
    fn cube_face_counts_follow_area() {
        let m = unit_cube();
        let weights: Vec<f64> = (0..m.faces().len()).map(|f| m.face_area(f)).collect();
        let mut rng = seeded_rng(5);
        let n = 60_000;
        let mut per_side = [0usize; 6];
        for (f, _) in sample_faces_weighted(&m, &weights, n, &mut rng).unwrap() {
            per_side[f / 2] += 1;
        }
        let p = 1.0 / 6.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in per_side {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{per_side:?}");
        }
    }

    #[test]
    fn single_triangle_points_are_barycentric() {
        let m = TriangleMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for p in sample_surface_points(&m, 2000, 2).unwrap() {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y / 2.0 <= 1.0 + 1e-12 && p.z == 0.0);
        }
    }

    #[test]
    fn sphere_points_at_radius() {
        let m = uv_sphere(Point3::origin(), 0.35, 64, 128);
        let pts = sample_surface_points(&m, 10_000, 4).unwrap();
        let mean = pts.iter().map(|p| p.coords.norm()).sum::<f64>() / pts.len() as f64;
        assert!((mean - 0.35).abs() < 0.01 * 0.35, "{mean}");
    }

    #[test]
    fn zero_area_mesh_rejected() {
        let m = TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_surface_points(&m, 10, 0), Err(Error::DegenerateMesh)));
    }
}
