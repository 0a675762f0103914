use std::path::PathBuf;

use crate::checkpoint::Checkpoint;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] occdiff_model::ModelError),

    #[error(transparent)]
    Core(#[from] occdiff_core::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("checksum mismatch for module {module}: expected {expected}, found {actual}")]
    ChecksumMismatch { module: String, expected: String, actual: String },

    #[error("training diverged at step {step}; last good checkpoint from step {}", last_good.step)]
    Diverged { step: usize, last_good: Box<Checkpoint> },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },

    #[error("decoded field has no surface at the decision threshold")]
    EmptySurface,

    #[error("dataset has no usable records")]
    EmptyDataset,

    #[error("{0} is not implemented")]
    NotImplemented(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }
}

/// Tags an error with the pipeline stage it came from.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<PipelineError>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::Stage { stage, source: Box::new(e.into()) })
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
