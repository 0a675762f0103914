//! In-memory training data: fixed-size clouds, query sets and surface
//! subsets, stacked into tensors on demand.

use candle_core::{Device, Tensor};
use occdiff_core::geometry::{sample_query_points, QuerySampling, TriangleMesh};
use occdiff_core::synthbuild::{Dataset, DatasetRecord, Split};
use occdiff_core::{derive_seed, Point3, SeededRng};
use occdiff_model::farthest_point_sample;
use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::{PipelineError, Result};

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub positions: Vec<[f32; 3]>,
    /// 1 inside, 0 outside.
    pub labels: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ShapeItem {
    pub id: String,
    pub cloud: Vec<[f32; 3]>,
    pub queries: Vec<QuerySet>,
    pub surface: Vec<[f32; 3]>,
    pub mesh: TriangleMesh,
}

pub struct TrainData {
    pub items: Vec<ShapeItem>,
}

/// One stacked mini-batch.
pub struct Batch {
    pub clouds: Tensor,
    pub positions: Tensor,
    pub labels: Tensor,
    pub surface: Tensor,
}

fn f32x3(p: &Point3) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

/// Reduces a cloud to exactly `n` points: farthest-point sampling when it is
/// larger, cyclic repetition when it is smaller.
pub fn prepare_cloud(points: &[Point3], n: usize) -> Result<Vec<[f32; 3]>> {
    if points.is_empty() {
        return Err(PipelineError::InvalidConfig("empty partial cloud".into()));
    }
    let pts: Vec<[f32; 3]> = points.iter().map(f32x3).collect();
    if pts.len() >= n {
        Ok(farthest_point_sample(&pts, n).into_iter().map(|i| pts[i]).collect())
    } else {
        Ok(pts.iter().cycle().take(n).copied().collect())
    }
}

fn take_cyclic(points: &[Point3], n: usize) -> Vec<[f32; 3]> {
    points.iter().cycle().take(n).map(f32x3).collect()
}

fn query_set(positions: &[Point3], values: &[u8]) -> QuerySet {
    QuerySet { positions: positions.iter().map(f32x3).collect(), labels: values.iter().map(|&v| v as f32).collect() }
}

impl TrainData {
    /// Loads `records`. Query set 0 is the stored sample when its size equals
    /// `query_count`; the others are drawn fresh from the mesh.
    pub fn load(dataset: &Dataset, records: &[&DatasetRecord], cfg: &TrainConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(PipelineError::EmptyDataset);
        }
        let sampling = QuerySampling { count: cfg.query_count, ..QuerySampling::default() };
        let mut items = Vec::with_capacity(records.len());
        for (ri, r) in records.iter().enumerate() {
            let mesh = dataset.load_mesh(r)?;
            let stored = dataset.load_occupancy(r)?;
            let cloud = dataset.load_cloud(r, 0)?;
            let surface = dataset.load_surface(r)?;
            let mut queries = Vec::with_capacity(cfg.query_sets);
            if stored.positions.len() == cfg.query_count {
                queries.push(query_set(&stored.positions, &stored.values));
            }
            let mut s = 0u64;
            while queries.len() < cfg.query_sets {
                let seed = derive_seed(derive_seed(cfg.seed, 0xda7a), (ri as u64) << 16 | s);
                let q = sample_query_points(&mesh, &sampling, seed)?;
                queries.push(query_set(&q.positions, &q.values));
                s += 1;
            }
            items.push(ShapeItem {
                id: r.id.clone(),
                cloud: prepare_cloud(&cloud.points, cfg.input_points)?,
                queries,
                surface: take_cyclic(&surface, cfg.cd_points),
                mesh,
            });
        }
        Ok(TrainData { items })
    }

    /// Every record of one split.
    pub fn load_split(dataset: &Dataset, split: Split, cfg: &TrainConfig) -> Result<Self> {
        let recs: Vec<&DatasetRecord> = dataset.split(split).collect();
        Self::load(dataset, &recs, cfg)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stacks items `idx`, taking query set `sets[i]` for item `idx[i]`.
    pub fn batch(&self, idx: &[usize], sets: &[usize], device: &Device) -> Result<Batch> {
        let b = idx.len();
        let items: Vec<&ShapeItem> = idx.iter().map(|&i| &self.items[i]).collect();
        let n = items[0].cloud.len();
        let q = items[0].queries[0].positions.len();
        let g = items[0].surface.len();
        let flat = |f: &dyn Fn(usize, &ShapeItem) -> Vec<f32>| -> Vec<f32> { items.iter().enumerate().flat_map(|(k, it)| f(k, it)).collect() };
        let clouds = flat(&|_, it| it.cloud.iter().flatten().copied().collect());
        let positions = flat(&|k, it| it.queries[sets[k]].positions.iter().flatten().copied().collect());
        let labels = flat(&|k, it| it.queries[sets[k]].labels.clone());
        let surface = flat(&|_, it| it.surface.iter().flatten().copied().collect());
        Ok(Batch {
            clouds: Tensor::from_vec(clouds, (b, n, 3), device)?,
            positions: Tensor::from_vec(positions, (b, q, 3), device)?,
            labels: Tensor::from_vec(labels, (b, q), device)?,
            surface: Tensor::from_vec(surface, (b, g, 3), device)?,
        })
    }

    /// Clouds only, `(B, N, 3)`.
    pub fn clouds(&self, idx: &[usize], device: &Device) -> Result<Tensor> {
        let n = self.items[idx[0]].cloud.len();
        let v: Vec<f32> = idx.iter().flat_map(|&i| self.items[i].cloud.iter().flatten().copied()).collect();
        Ok(Tensor::from_vec(v, (idx.len(), n, 3), device)?)
    }
}

/// Epoch-wise shuffled index stream.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(len: usize, rng: SeededRng) -> Self {
        BatchSampler { order: (0..len).collect(), pos: len, rng }
    }

    /// Next `batch` indices. When `batch <= len` no index repeats within a
    /// batch; a repeat at an epoch boundary is skipped.
    pub fn next(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let i = self.order[self.pos];
            self.pos += 1;
            if batch > self.order.len() || !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        &mut self.rng
    }
}

/// Index chunks covering `0..len` in order.
pub fn chunks(len: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len).step_by(size.max(1)).map(move |s| (s..(s + size).min(len)).collect())
}
