use std::path::PathBuf;

/// Errors raised by geometry, dataset and evaluation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh is not watertight: {count} open or non-manifold edges, first {sample:?}")]
    NotWatertight { count: usize, sample: Vec<(u32, u32)> },

    #[error("face {face} references vertex {index} but mesh has {vertex_count} vertices")]
    BadFaceIndex { face: usize, index: u32, vertex_count: usize },

    #[error("mesh has zero surface area")]
    DegenerateMesh,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid building spec: {0}")]
    InvalidSpec(String),

    #[error("partial scan produced {got} points after {attempts} attempts, need at least {min}")]
    TooFewPoints { got: usize, min: usize, attempts: usize },

    #[error("empty point set passed to {0}")]
    EmptyPointSet(&'static str),

    #[error("field returned {value} at query {index}, outside [0, 1]")]
    FieldOutOfRange { index: usize, value: f64 },

    #[error("occupancy field evaluation failed: {0}")]
    Field(#[source] Box<dyn std::error::Error + Send + Sync>),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("checksum mismatch in {path}: header {expected}, payload {actual}")]
    Checksum { path: PathBuf, expected: String, actual: String },

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no usable mesh/cloud pairs: {0}")]
    NoPairs(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }

    /// Wraps an error with the id of the dataset record that produced it.
    pub fn in_record(self, id: impl Into<String>) -> Self {
        Error::Record { id: id.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
