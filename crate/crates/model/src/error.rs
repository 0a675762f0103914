/// Errors raised by the learned components.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point cloud has {got} points, need at least {min}")]
    TooFewPoints { got: usize, min: usize },

    #[error("non-finite state at Euler step {step}")]
    SamplerDiverged { step: usize },

    #[error("{0} is not implemented")]
    NotImplemented(&'static str),

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error(transparent)]
    Core(#[from] occdiff_core::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
