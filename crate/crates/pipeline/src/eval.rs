//! Evaluation of decoded fields against reference meshes, from either the
//! encoded ground-truth latent or a sampled one.

use std::fmt;
use std::path::Path;

use candle_core::Tensor;
use occdiff_core::evalkit::{mesh_metrics, volumetric_iou, Aggregate, EvalConfig, EvalReport, Failure, MetricsRecord};
use occdiff_core::geometry::obj::write_obj;
use occdiff_core::geometry::{occupancy_query, Aabb, TriangleMesh};
use occdiff_core::isoext::{mise_extract, OccupancyField};
use occdiff_core::{derive_seed, Point3};
use serde::{Deserialize, Serialize};

use crate::data::{chunks, TrainData};
use crate::infer::{z0_seed, Model};
use crate::{PipelineError, Result};

/// Exact occupancy of a closed mesh as a 0/1 field.
pub struct MeshField<'a>(pub &'a TriangleMesh);

impl OccupancyField for MeshField<'_> {
    fn probabilities(&self, points: &[Point3]) -> occdiff_core::Result<Vec<f64>> {
        Ok(occupancy_query(self.0, points)?.into_iter().map(f64::from).collect())
    }
}

/// Where the decoded latent comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Latent encoder applied to ground-truth occupancy.
    Latent,
    /// Flow sampler started from noise.
    Diffusion,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Latent => "latent",
            Source::Diffusion => "diffusion",
        })
    }
}

/// Items evaluated under `cfg.eval_records` (0 means all).
pub fn eval_items(data: &TrainData, limit: usize) -> Vec<usize> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    (0..n).collect()
}

/// Latents `(len, Z)` and conditions `(len, C)` for `items`.
pub fn latents(model: &Model, data: &TrainData, items: &[usize], source: Source, seed: u64) -> Result<(Tensor, Tensor)> {
    let mut zs = Vec::new();
    let mut cs = Vec::new();
    for part in chunks(items.len(), model.cfg.fm_batch.max(1)) {
        let idx: Vec<usize> = part.iter().map(|&k| items[k]).collect();
        let cond = model.bundle.cond(&data.clouds(&idx, model.bundle.device())?)?.detach();
        let z = match source {
            Source::Latent => {
                let rows = idx
                    .iter()
                    .enumerate()
                    .map(|(r, &i)| {
                        let q = &data.items[i].queries[0];
                        model.encode_occupancy(&q.positions, &q.labels, &cond.narrow(0, r, 1)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Tensor::cat(&rows, 0)?
            }
            Source::Diffusion => {
                let seeds: Vec<u64> = idx.iter().map(|&i| z0_seed(seed, i as u64)).collect();
                model.sample_latents(&model.noise(&seeds)?, &cond)?
            }
        };
        zs.push(z);
        cs.push(cond);
    }
    Ok((Tensor::cat(&zs, 0)?, Tensor::cat(&cs, 0)?))
}

/// Decodes every item, extracts a mesh at `resolution` and scores it.
/// Per-item failures become failure rows.
pub fn evaluate_source(
    model: &Model,
    data: &TrainData,
    items: &[usize],
    source: Source,
    resolution: usize,
    seed: u64,
    mesh_dir: Option<&Path>,
) -> Result<EvalReport> {
    let cfg = &model.cfg;
    let (z, cond) = latents(model, data, items, source, seed)?;
    let metric_cfg = EvalConfig { samples: cfg.eval_samples, seed, ..EvalConfig::default() };
    let mut report = EvalReport::default();
    for (row, &i) in items.iter().enumerate() {
        let item = &data.items[i];
        let result = (|| -> Result<MetricsRecord> {
            let field = model.field(&z, &cond, row)?;
            let iou = volumetric_iou(&field, &MeshField(&item.mesh), cfg.iou_samples, derive_seed(seed, i as u64), &Aabb::unit())?;
            let out = mise_extract(&field, &model.mise_config(resolution))?;
            if out.empty {
                return Err(PipelineError::EmptySurface);
            }
            if let Some(dir) = mesh_dir {
                std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
                write_obj(&out.mesh, &dir.join(format!("{}.obj", item.id)))?;
            }
            let mut rec = mesh_metrics(&item.id, &out.mesh, &item.mesh, &metric_cfg)?;
            rec.iou = Some(iou);
            Ok(rec)
        })();
        match result {
            Ok(rec) => {
                tracing::info!(target: "occdiff::eval", source = %source, id = %rec.id, iou = rec.iou, cd_l2_e3 = rec.cd_l2_e3, f_score = rec.f_score);
                report.rows.push(rec);
            }
            Err(e) => {
                tracing::warn!(target: "occdiff::eval", source = %source, id = %item.id, error = %e);
                report.failures.push(Failure { id: item.id.clone(), reason: e.to_string() });
            }
        }
    }
    report.aggregate = Aggregate::over(&report.rows, report.failures.len());
    Ok(report)
}

/// Volumetric IoU of decoded fields only, without mesh extraction.
pub fn field_iou(model: &Model, data: &TrainData, items: &[usize], source: Source, seed: u64) -> Result<Vec<f64>> {
    let (z, cond) = latents(model, data, items, source, seed)?;
    items
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let field = model.field(&z, &cond, row)?;
            Ok(volumetric_iou(&field, &MeshField(&data.items[i].mesh), model.cfg.iou_samples, derive_seed(seed, i as u64), &Aabb::unit())?)
        })
        .collect()
}
