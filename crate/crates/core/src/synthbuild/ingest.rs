use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{assign_splits, quantized_sample, write_manifest, write_record_files, DatasetRecord};
use crate::geometry::obj::{read_obj, read_point_cloud};
use crate::geometry::{sample_query_points, sample_surface_points, Aabb, Normalization, QuerySampling};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub query: QuerySampling,
    pub surface_points: usize,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { query: QuerySampling::default(), surface_points: 2048, split: [0.8, 0.1, 0.1], seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestSummary {
    pub records: Vec<DatasetRecord>,
    /// Mesh stems without any matching cloud.
    pub unmatched_meshes: Vec<String>,
    /// Cloud files whose stem matched no mesh.
    pub unmatched_clouds: Vec<String>,
    /// Stems skipped because the mesh was not closed and oriented.
    pub skipped_open: Vec<String>,
}

fn stem(path: &Path) -> Option<String> {
    path.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

/// Imports external mesh/cloud pairs matched by file stem.
///
/// A cloud belongs to mesh `m` when its stem is `m` or starts with `m_`
/// (several scans per building); the longest matching mesh stem wins. Each
/// pair is normalized jointly so mesh and clouds share one transform.
pub fn ingest_external(mesh_dir: &Path, cloud_dir: &Path, out: &Path, opts: &IngestOptions) -> Result<IngestSummary> {
    let meshes: BTreeMap<String, PathBuf> = list_files(mesh_dir)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")))
        .filter_map(|p| stem(&p).map(|s| (s, p)))
        .collect();
    let mut clouds: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut summary = IngestSummary::default();
    for path in list_files(cloud_dir)? {
        let Some(s) = stem(&path) else { continue };
        let owner = meshes
            .keys()
            .filter(|m| s == **m || s.strip_prefix(m.as_str()).is_some_and(|rest| rest.starts_with('_')))
            .max_by_key(|m| m.len());
        match owner {
            Some(m) => clouds.entry(m.clone()).or_default().push(path),
            None => summary.unmatched_clouds.push(path.display().to_string()),
        }
    }

    let mut pairs = Vec::new();
    for (name, mesh_path) in &meshes {
        match clouds.get(name) {
            Some(c) => pairs.push((name.clone(), mesh_path.clone(), c.clone())),
            None => summary.unmatched_meshes.push(name.clone()),
        }
    }
    if !summary.unmatched_meshes.is_empty() || !summary.unmatched_clouds.is_empty() {
        tracing::warn!(
            meshes = summary.unmatched_meshes.len(),
            clouds = summary.unmatched_clouds.len(),
            "unmatched files during ingest"
        );
    }
    if pairs.is_empty() {
        return Err(Error::NoPairs(format!("{} meshes and no matching clouds", meshes.len())));
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let splits = assign_splits(pairs.len(), opts.split, opts.seed)?;
    for (i, ((name, mesh_path, cloud_paths), split)) in pairs.into_iter().zip(splits).enumerate() {
        let raw = read_obj(&mesh_path)?;
        if !raw.is_watertight() {
            tracing::warn!(stem = %name, open_edges = raw.open_edges().len(), "skipping mesh that is not watertight");
            summary.skipped_open.push(name);
            continue;
        }
        let raw_clouds = cloud_paths.iter().map(|p| read_point_cloud(p)).collect::<Result<Vec<_>>>()?;
        let bounds = Aabb::from_points(raw.vertices().iter().chain(raw_clouds.iter().flatten())).ok_or(Error::DegenerateMesh)?;
        let t = Normalization::fit(&bounds).map_err(|e| e.in_record(&name))?;
        let mesh = raw.transformed(&t);
        let seed = derive_seed(opts.seed, i as u64);
        let build = || -> Result<DatasetRecord> {
            let sample = quantized_sample(&mesh, sample_query_points(&mesh, &opts.query, derive_seed(seed, 1))?)?;
            let surface = sample_surface_points(&mesh, opts.surface_points, derive_seed(seed, 3))?;
            let normalized: Vec<_> = raw_clouds.iter().map(|c| c.iter().map(|p| t.apply(p)).collect()).collect();
            write_record_files(out, &name, &mesh, &sample, &normalized, &surface, split, t, None)
        };
        summary.records.push(build().map_err(|e| e.in_record(&name))?);
    }
    if summary.records.is_empty() {
        return Err(Error::NoPairs("every matched mesh was skipped".into()));
    }
    write_manifest(out, &summary.records)?;
    Ok(summary)
}
