//! Completion metrics (Chamfer L1/L2, F-score, volumetric IoU) and the
//! mesh-sampling evaluation harness.

mod metrics;
mod report;

pub use metrics::{cd_l1, cd_l2, f_score, nn_distances, volumetric_iou, FScore};
pub use report::{evaluate_run, mesh_metrics, Aggregate, EvalConfig, EvalReport, Failure, MetricsRecord};
