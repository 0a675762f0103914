use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cd_l1, cd_l2, f_score};
use crate::geometry::obj::read_obj;
use crate::geometry::{sample_surface_points, TriangleMesh};
use crate::synthbuild::{Dataset, DatasetRecord};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Surface samples drawn from each of the predicted and reference meshes.
    pub samples: usize,
    /// F-score distance as a fraction of the reference bounding-box diagonal.
    pub f_threshold_frac: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { samples: 16_384, f_threshold_frac: 0.01, seed: 0 }
    }
}

/// Metrics for one predicted mesh. Chamfer values are reported ×10⁻³, i.e.
/// `cd_l2_e3 = 1000 · CD_L2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub id: String,
    pub cd_l1_e3: f64,
    pub cd_l2_e3: f64,
    pub f_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    pub pred_samples: usize,
    pub gt_samples: usize,
    pub f_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub failures: usize,
    pub cd_l1_e3: f64,
    pub cd_l2_e3: f64,
    pub f_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricsRecord>,
    pub failures: Vec<Failure>,
    pub aggregate: Aggregate,
}

/// Compares two meshes through equal-size surface samples.
pub fn mesh_metrics(id: &str, pred: &TriangleMesh, gt: &TriangleMesh, cfg: &EvalConfig) -> Result<MetricsRecord> {
    let seed = derive_seed(cfg.seed, fnv1a(id));
    let ps = sample_surface_points(pred, cfg.samples, derive_seed(seed, 1))?;
    let gs = sample_surface_points(gt, cfg.samples, derive_seed(seed, 2))?;
    let threshold = cfg.f_threshold_frac * gt.bounds().ok_or(Error::DegenerateMesh)?.diagonal();
    Ok(MetricsRecord {
        id: id.to_string(),
        cd_l1_e3: 1e3 * cd_l1(&ps, &gs)?,
        cd_l2_e3: 1e3 * cd_l2(&ps, &gs)?,
        f_score: f_score(&ps, &gs, threshold)?.f,
        iou: None,
        pred_samples: ps.len(),
        gt_samples: gs.len(),
        f_threshold: threshold,
    })
}

/// Stable 64-bit hash of a record id (FNV-1a) for per-record seeding.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl EvalReport {
    /// Builds a report, averaging over successful rows only.
    pub fn from_results(results: Vec<(String, Result<MetricsRecord>)>) -> Self {
        let mut report = EvalReport::default();
        for (id, r) in results {
            match r {
                Ok(row) => report.rows.push(row),
                Err(e) => report.failures.push(Failure { id, reason: e.to_string() }),
            }
        }
        report.aggregate = Aggregate::over(&report.rows, report.failures.len());
        report
    }

    /// Line-delimited rows followed by one `summary` line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        for f in &self.failures {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "failure": f }))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({ "summary": self.aggregate }))?);
        out.push('\n');
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Plain-text table with the completion-benchmark metric trio.
    pub fn table(&self) -> String {
        let mut s = String::from("id         CD_L2(x1e-3)  CD_L1(x1e-3)  F-Score\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:<10} {:>12.4} {:>13.4} {:>8.4}", r.id, r.cd_l2_e3, r.cd_l1_e3, r.f_score);
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "{:<10} {:>12.4} {:>13.4} {:>8.4}  (n={}, failed={})", "mean", a.cd_l2_e3, a.cd_l1_e3, a.f_score, a.count, a.failures);
        s
    }
}

impl Aggregate {
    pub fn over(rows: &[MetricsRecord], failures: usize) -> Self {
        let n = rows.len();
        if n == 0 {
            return Aggregate { failures, ..Default::default() };
        }
        let mean = |f: fn(&MetricsRecord) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
        let ious: Vec<f64> = rows.iter().filter_map(|r| r.iou).collect();
        Aggregate {
            count: n,
            failures,
            cd_l1_e3: mean(|r| r.cd_l1_e3),
            cd_l2_e3: mean(|r| r.cd_l2_e3),
            f_score: mean(|r| r.f_score),
            iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        }
    }
}

/// Evaluates `<pred_dir>/<id>.obj` against each record's reference mesh.
/// Missing or unusable predictions become failure rows and are excluded from
/// the aggregate.
pub fn evaluate_run(pred_dir: &Path, dataset: &Dataset, records: &[&DatasetRecord], cfg: &EvalConfig) -> EvalReport {
    let results = records
        .iter()
        .map(|r| {
            let row = (|| {
                let gt = dataset.load_mesh(r)?;
                let pred = read_obj(&pred_dir.join(format!("{}.obj", r.id)))?;
                mesh_metrics(&r.id, &pred, &gt, cfg)
            })();
            (r.id.clone(), row)
        })
        .collect();
    EvalReport::from_results(results)
}
