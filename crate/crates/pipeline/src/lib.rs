//! Orchestration of shape completion in occupancy-function space: configs,
//! the two training stages, inference, evaluation and ablations.
//!
//! Stage (a) trains the point encoder, latent encoder and occupancy decoder
//! jointly. Stage (b) freezes them and fits a conditional velocity field on
//! the encoded latents. Inference samples a latent from noise, decodes it
//! into an occupancy field and extracts a mesh.

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod device;
pub mod eval;
pub mod infer;
pub mod run;
pub mod train;

mod error;

pub use checkpoint::{Checkpoint, CheckpointKind, LatentStats, ModuleBlob};
pub use config::{LatentSource, LrSchedule, Profile, Stage, TrainConfig};
pub use data::TrainData;
pub use error::{PipelineError, Result};
pub use eval::{evaluate_source, MeshField, Source};
pub use infer::{infer, infer_mesh, DecoderField, Model};
pub use run::{default_grid, run_ablation_matrix, run_pipeline, AblationReport, Flags, PipelineRun};
pub use train::{train_stage_a, train_stage_b, StageARun, StageBRun};
