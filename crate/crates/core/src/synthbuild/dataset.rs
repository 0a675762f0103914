use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::format::{read_occupancy, read_points, write_occupancy, write_points};
use super::{generate_building, simulate_partial_scan, BuildingSpec, PartialCloud, SensorParams, SpecDistribution};
use crate::geometry::obj::{read_obj, write_obj};
use crate::geometry::{
    occupancy_query, sample_query_points, sample_surface_points, Normalization, OccupancySample, QuerySampling,
    TriangleMesh,
};
use crate::{derive_seed, seeded_rng, Error, Point3, Result};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest line. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub mesh: PathBuf,
    pub occupancy: PathBuf,
    /// One or more partial scans of the same building.
    pub clouds: Vec<PathBuf>,
    /// Dense ground-truth surface samples (Chamfer targets).
    pub surface: PathBuf,
    pub split: Split,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<BuildingSpec>,
}

/// Generation parameters for a procedural dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub count: usize,
    pub distribution: SpecDistribution,
    pub sensor: SensorParams,
    pub query: QuerySampling,
    pub surface_points: usize,
    /// Train/val/test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            count: 64,
            distribution: SpecDistribution::default(),
            sensor: SensorParams::default(),
            query: QuerySampling::default(),
            surface_points: 2048,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Assigns exact split sizes (rounded train and val, test takes the rest)
/// over a seeded permutation of record indices.
pub fn assign_splits(count: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|&f| f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let n_train = (count as f64 * fractions[0]).round() as usize;
    let n_val = ((count as f64 * fractions[1]).round() as usize).min(count - n_train.min(count));
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, 0x5911)));
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

/// Rounds positions to the stored `f32` precision and relabels them, so the
/// files on disk agree exactly with a fresh occupancy query.
pub(crate) fn quantized_sample(mesh: &TriangleMesh, sample: OccupancySample) -> Result<OccupancySample> {
    let positions: Vec<Point3> =
        sample.positions.iter().map(|p| Point3::new(p.x as f32 as f64, p.y as f32 as f64, p.z as f32 as f64)).collect();
    let values = occupancy_query(mesh, &positions)?;
    OccupancySample::new(positions, values)
}

/// Generates `cfg.count` buildings with their occupancy samples, partial
/// scans and surface samples under `out`, then writes the manifest.
pub fn build_dataset(cfg: &BuildConfig, out: &Path) -> Result<Vec<DatasetRecord>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits = assign_splits(cfg.count, cfg.split, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.count);
    for (i, split) in splits.into_iter().enumerate() {
        let id = format!("b{i:05}");
        let record = build_record(cfg, out, &id, i as u64, split).map_err(|e| e.in_record(&id))?;
        records.push(record);
    }
    write_manifest(out, &records)?;
    Ok(records)
}

fn build_record(cfg: &BuildConfig, out: &Path, id: &str, index: u64, split: Split) -> Result<DatasetRecord> {
    let seed = derive_seed(cfg.seed, index);
    let spec = cfg.distribution.sample(seed)?;
    let (mesh, normalization) = generate_building(&spec)?.normalized()?;
    let sample = quantized_sample(&mesh, sample_query_points(&mesh, &cfg.query, derive_seed(seed, 1))?)?;
    let cloud = simulate_partial_scan(&mesh, &cfg.sensor, derive_seed(seed, 2))?;
    let surface = sample_surface_points(&mesh, cfg.surface_points, derive_seed(seed, 3))?;
    write_record_files(out, id, &mesh, &sample, &[cloud.points], &surface, split, normalization, Some(spec))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn write_record_files(
    root: &Path,
    id: &str,
    mesh: &TriangleMesh,
    sample: &OccupancySample,
    clouds: &[Vec<Point3>],
    surface: &[Point3],
    split: Split,
    normalization: Normalization,
    spec: Option<BuildingSpec>,
) -> Result<DatasetRecord> {
    let dir = root.join(id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let rel = |name: &str| PathBuf::from(id).join(name);
    write_obj(mesh, &root.join(rel("mesh.obj")))?;
    write_occupancy(&root.join(rel("occupancy.bin")), sample)?;
    write_points(&root.join(rel("surface.bin")), surface)?;
    let mut cloud_paths = Vec::new();
    for (k, c) in clouds.iter().enumerate() {
        let p = rel(&format!("cloud_{k}.bin"));
        write_points(&root.join(&p), c)?;
        cloud_paths.push(p);
    }
    Ok(DatasetRecord {
        id: id.to_string(),
        mesh: rel("mesh.obj"),
        occupancy: rel("occupancy.bin"),
        clouds: cloud_paths,
        surface: rel("surface.bin"),
        split,
        normalization,
        spec,
    })
}

pub fn write_manifest(root: &Path, records: &[DatasetRecord]) -> Result<()> {
    let path = root.join(MANIFEST);
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&path, e))
}

/// A dataset on disk: its root directory and manifest records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<DatasetRecord>, _>>()?;
        Ok(Dataset { root: root.to_path_buf(), records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn load_mesh(&self, r: &DatasetRecord) -> Result<TriangleMesh> {
        read_obj(&self.root.join(&r.mesh)).map_err(|e| e.in_record(&r.id))
    }

    pub fn load_occupancy(&self, r: &DatasetRecord) -> Result<OccupancySample> {
        read_occupancy(&self.root.join(&r.occupancy)).map_err(|e| e.in_record(&r.id))
    }

    pub fn load_surface(&self, r: &DatasetRecord) -> Result<Vec<Point3>> {
        read_points(&self.root.join(&r.surface)).map_err(|e| e.in_record(&r.id))
    }

    pub fn load_cloud(&self, r: &DatasetRecord, index: usize) -> Result<PartialCloud> {
        let path = r
            .clouds
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("record {} has no cloud {index}", r.id)))?;
        let points = read_points(&self.root.join(path)).map_err(|e| e.in_record(&r.id))?;
        Ok(PartialCloud { points, meta: None })
    }

    /// Picks one of the record's partial clouds uniformly at random.
    pub fn pick_cloud<R: Rng + ?Sized>(&self, r: &DatasetRecord, rng: &mut R) -> Result<PartialCloud> {
        if r.clouds.is_empty() {
            return Err(Error::InvalidArgument(format!("record {} has no clouds", r.id)));
        }
        self.load_cloud(r, rng.random_range(0..r.clouds.len()))
    }

    /// Re-reads every file and checks stored labels against a fresh
    /// occupancy query on the stored mesh.
    pub fn verify(&self) -> Result<()> {
        for r in &self.records {
            let mesh = self.load_mesh(r)?;
            let sample = self.load_occupancy(r)?;
            let fresh = occupancy_query(&mesh, &sample.positions).map_err(|e| e.in_record(&r.id))?;
            if fresh != sample.values {
                let bad = fresh.iter().zip(&sample.values).filter(|(a, b)| a != b).count();
                return Err(Error::InvalidArgument(format!("{bad} stored labels disagree with the mesh")).in_record(&r.id));
            }
            self.load_surface(r)?;
            for k in 0..r.clouds.len() {
                self.load_cloud(r, k)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_are_exact() {
        let s = assign_splits(100, [0.8, 0.1, 0.1], 1).unwrap();
        let count = |k| s.iter().filter(|&&x| x == k).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (80, 10, 10));
        assert!(assign_splits(10, [0.5, 0.6, 0.1], 0).is_err());
    }

    #[test]
    fn small_build_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BuildConfig { count: 4, query: QuerySampling { count: 200, ..Default::default() }, surface_points: 256, ..Default::default() };
        let records = build_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(records.len(), 4);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.records, records);
        ds.verify().unwrap();
        let cloud = ds.load_cloud(&records[0], 0).unwrap();
        assert!(cloud.len() >= cfg.sensor.min_points);
    }
}
