use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{sample_faces_weighted, TriangleMesh};
use crate::{derive_seed, seeded_rng, Error, Point3, Result, Vec3};

/// Faces with `|n_z|` at most this are treated as facades.
const FACADE_NZ: f64 = 0.1;

/// Airborne-LiDAR-like sensor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Points drawn before density thinning.
    pub target_points: usize,
    /// Probability that an entire planar facade is occluded.
    pub facade_dropout: f64,
    /// Sampling density of visible facades relative to a flat roof.
    pub facade_density: f64,
    /// Standard deviation of the along-normal range noise (normalized units).
    pub noise_sigma: f64,
    /// Strength in `[0, 1]` of a linear density falloff across the footprint.
    pub density_gradient: f64,
    pub min_points: usize,
    pub max_attempts: usize,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            target_points: 1024,
            facade_dropout: 0.5,
            facade_density: 0.25,
            noise_sigma: 0.005,
            density_gradient: 0.3,
            min_points: 256,
            max_attempts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub sensor: SensorParams,
    pub seed: u64,
    /// Number of simulation attempts consumed (1 unless regenerated).
    pub attempts: usize,
}

/// Noisy, incomplete observation of a building.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCloud {
    pub points: Vec<Point3>,
    pub meta: Option<ScanMeta>,
}

impl PartialCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Simulates an overhead scan: roofs sampled densely in proportion to their
/// upward normal component, facades sparsely with whole planar facades
/// dropped, undersides never seen. Points are displaced along the face normal
/// by Gaussian noise truncated at 3σ.
pub fn simulate_partial_scan(mesh: &TriangleMesh, sensor: &SensorParams, seed: u64) -> Result<PartialCloud> {
    mesh.require_watertight()?;
    if !(0.0..=1.0).contains(&sensor.facade_dropout) || !(0.0..=1.0).contains(&sensor.density_gradient) {
        return Err(Error::InvalidArgument("dropout and density gradient must lie in [0, 1]".into()));
    }
    if sensor.noise_sigma < 0.0 || sensor.facade_density < 0.0 {
        return Err(Error::InvalidArgument("noise and facade density must be non-negative".into()));
    }
    let bounds = mesh.bounds().ok_or(Error::DegenerateMesh)?;
    let planes = planar_groups(mesh);
    let mut got = 0;
    for attempt in 0..sensor.max_attempts.max(1) {
        let mut rng = seeded_rng(derive_seed(seed, attempt as u64));
        let mut dropped: HashMap<usize, bool> = HashMap::new();
        let weights: Vec<f64> = (0..mesh.faces().len())
            .map(|f| {
                let nz = mesh.face_normal(f).z;
                if nz > FACADE_NZ {
                    mesh.face_area(f) * nz
                } else if nz >= -FACADE_NZ {
                    let gone = *dropped.entry(planes[f]).or_insert_with(|| rng.random_bool(sensor.facade_dropout));
                    if gone {
                        0.0
                    } else {
                        mesh.face_area(f) * sensor.facade_density
                    }
                } else {
                    0.0
                }
            })
            .collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            got = 0;
            continue;
        }
        let raw = sample_faces_weighted(mesh, &weights, sensor.target_points, &mut rng)?;

        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vec3::new(angle.cos(), angle.sin(), 0.0);
        let proj: Vec<f64> = [bounds.min, bounds.max]
            .iter()
            .flat_map(|a| [bounds.min, bounds.max].map(|b| Point3::new(a.x, b.y, 0.0).coords.dot(&dir)))
            .collect();
        let (lo, hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = (hi - lo).max(f64::EPSILON);

        let noise = Normal::new(0.0, sensor.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let cap = 3.0 * sensor.noise_sigma;
        let mut points = Vec::with_capacity(raw.len());
        for (f, p) in raw {
            let keep = 1.0 - sensor.density_gradient * (p.coords.dot(&dir) - lo) / span;
            let accept: f64 = rng.random();
            let offset: f64 = noise.sample(&mut rng);
            if accept >= keep {
                continue;
            }
            let offset = if sensor.noise_sigma > 0.0 { offset.clamp(-cap, cap) } else { 0.0 };
            points.push(p + mesh.face_normal(f) * offset);
        }
        got = points.len();
        if got >= sensor.min_points {
            return Ok(PartialCloud {
                points,
                meta: Some(ScanMeta { sensor: *sensor, seed, attempts: attempt + 1 }),
            });
        }
    }
    Err(Error::TooFewPoints { got, min: sensor.min_points, attempts: sensor.max_attempts.max(1) })
}

/// Labels each face with the id of its supporting plane so coplanar triangles
/// (one wall) are occluded together.
fn planar_groups(mesh: &TriangleMesh) -> Vec<usize> {
    let q = |v: f64| (v * 1e6).round() as i64;
    let mut ids: HashMap<[i64; 4], usize> = HashMap::new();
    (0..mesh.faces().len())
        .map(|f| {
            let n = mesh.face_normal(f);
            let d = n.dot(&mesh.triangle(f)[0].coords);
            let key = [q(n.x), q(n.y), q(n.z), q(d)];
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect()
}
