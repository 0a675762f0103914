//! Learned components: the conditional point encoder, the occupancy
//! function autoencoder and the flow-matching velocity network, built on
//! candle tensors with seeded, framework-independent initialization.

pub mod flowmatch;
pub mod funcae;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod pointenc;

mod error;

pub use error::{ModelError, Result};
pub use flowmatch::{
    euler_sample, fm_loss, fm_loss_with, interpolate, FlowState, FmDraw, SamplerConfig, VelocityConfig, VelocityField,
    VelocityModel,
};
pub use funcae::{bce_from_logits, encode_positions, stage_a_loss, FuncAeConfig, LatentEncoder, OccDecoder, Pooling, StageALoss};
pub use gradcheck::{check_gradients, GradCheckConfig, GradSample};
pub use params::{Init, ParamStore};
pub use pointenc::{chamfer_l2, cosine_similarity, farthest_point_sample, Encoded, PointEncoder, PointEncoderConfig};
