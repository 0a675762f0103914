//! All learned modules of the model in one parameter store.

use candle_core::{DType, Device, Tensor};
use occdiff_core::derive_seed;
use occdiff_model::{Init, LatentEncoder, OccDecoder, ParamStore, PointEncoder, VelocityModel};

use crate::checkpoint::{Checkpoint, ModuleBlob};
use crate::config::TrainConfig;
use crate::Result;

pub const POINTENC: &str = "pointenc";
pub const LATENT: &str = "latent";
pub const DECODER: &str = "decoder";
pub const VELOCITY: &str = "velocity";

/// Modules trained in the autoencoder stage.
pub const STAGE_A_MODULES: [&str; 3] = [POINTENC, LATENT, DECODER];

pub struct ModelBundle {
    pub store: ParamStore,
    pub pointenc: PointEncoder,
    pub latent: LatentEncoder,
    pub decoder: OccDecoder,
    pub velocity: VelocityModel,
}

impl ModelBundle {
    /// Freshly initialized modules; each draws from its own seed stream.
    pub fn new(cfg: &TrainConfig, device: &Device) -> Result<Self> {
        cfg.require_implemented()?;
        let mut store = ParamStore::new(DType::F32, device.clone());
        let pointenc = PointEncoder::new(&mut Init::new(&mut store, derive_seed(cfg.seed, 101)), POINTENC, &cfg.point_encoder())?;
        let ae = cfg.autoencoder();
        let latent = LatentEncoder::new(&mut Init::new(&mut store, derive_seed(cfg.seed, 102)), LATENT, &ae)?;
        let decoder = OccDecoder::new(&mut Init::new(&mut store, derive_seed(cfg.seed, 103)), DECODER, &ae)?;
        let velocity = VelocityModel::new(&mut Init::new(&mut store, derive_seed(cfg.seed, 104)), VELOCITY, &cfg.velocity())?;
        Ok(ModelBundle { store, pointenc, latent, decoder, velocity })
    }

    pub fn capture(&self, module: &str) -> Result<ModuleBlob> {
        ModuleBlob::capture(&self.store, module)
    }

    pub fn hash(&self, module: &str) -> Result<String> {
        Ok(self.store.hash_prefix(&format!("{module}."))?)
    }

    /// Overwrites every module present in `ckpt`.
    pub fn load(&self, ckpt: &Checkpoint) -> Result<()> {
        for (name, blob) in &ckpt.modules {
            blob.restore(&self.store, name)?;
        }
        Ok(())
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Condition features for a batch of prepared clouds `(B, N, 3)`.
    pub fn cond(&self, clouds: &Tensor) -> Result<Tensor> {
        Ok(self.pointenc.forward(clouds)?.cond)
    }
}
