//! Inference: condition from a partial cloud, latent from the flow sampler,
//! mesh from multiresolution extraction of the decoded field.

use candle_core::{Device, Tensor};
use occdiff_core::geometry::{Aabb, TriangleMesh};
use occdiff_core::isoext::{mise_extract, MiseConfig, MiseOutput, OccupancyField};
use occdiff_core::{derive_seed, seeded_rng, Point3};
use occdiff_model::{euler_sample, OccDecoder};
use rand::Rng;

use crate::bundle::{ModelBundle, STAGE_A_MODULES, VELOCITY};
use crate::checkpoint::{Checkpoint, CheckpointKind, LatentStats};
use crate::config::TrainConfig;
use crate::data::prepare_cloud;
use crate::error::StageContext;
use crate::train::check_stage_a;
use crate::{PipelineError, Result};

/// Decoder closed over one latent and condition, evaluable at any position.
pub struct DecoderField<'a> {
    decoder: &'a OccDecoder,
    z: Tensor,
    cond: Option<Tensor>,
    chunk: usize,
}

impl<'a> DecoderField<'a> {
    /// `z (1, Z)`, `cond (1, C)`.
    pub fn new(decoder: &'a OccDecoder, z: Tensor, cond: Option<Tensor>) -> Self {
        let cond = cond.filter(|_| decoder.uses_cond());
        DecoderField { decoder, z, cond, chunk: 16_384 }
    }

    fn eval(&self, points: &[Point3]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for part in points.chunks(self.chunk) {
            let flat: Vec<f32> = part.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
            let pos = Tensor::from_vec(flat, (1, part.len(), 3), self.z.device())?;
            let p = self.decoder.probabilities(&self.z, &pos, self.cond.as_ref())?;
            out.extend(p.squeeze(0)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?);
        }
        Ok(out)
    }
}

impl OccupancyField for DecoderField<'_> {
    fn probabilities(&self, points: &[Point3]) -> occdiff_core::Result<Vec<f64>> {
        self.eval(points).map_err(|e| occdiff_core::Error::Field(Box::new(e)))
    }
}

/// Both stages loaded into one bundle.
pub struct Model {
    pub bundle: ModelBundle,
    pub cfg: TrainConfig,
    pub stats: Option<LatentStats>,
    has_velocity: bool,
}

impl Model {
    /// Loads a stage-(a) checkpoint and optionally the stage-(b) checkpoint
    /// trained on top of it.
    pub fn load(stage_a: &Checkpoint, stage_b: Option<&Checkpoint>, device: &Device) -> Result<Self> {
        let mut cfg = TrainConfig::parse(&stage_a.config)?;
        check_stage_a(stage_a, &cfg)?;
        let mut stats = None;
        if let Some(b) = stage_b {
            if b.kind != CheckpointKind::Diffusion {
                return Err(PipelineError::InvalidConfig("expected a diffusion checkpoint".into()));
            }
            let ours = stage_a.checksums();
            for m in STAGE_A_MODULES {
                let (expected, actual) = (b.parents.get(m).cloned().unwrap_or_default(), ours[m].clone());
                if expected != actual {
                    return Err(PipelineError::ChecksumMismatch { module: m.to_string(), expected, actual });
                }
            }
            let bcfg = TrainConfig::parse(&b.config)?;
            check_stage_a(stage_a, &bcfg)?;
            stats = b.latent_stats.clone();
            cfg = bcfg;
        }
        let bundle = ModelBundle::new(&cfg, device)?;
        bundle.load(stage_a)?;
        if let Some(b) = stage_b {
            b.module(VELOCITY)?;
            bundle.load(b)?;
        }
        Ok(Model { bundle, cfg, stats, has_velocity: stage_b.is_some() })
    }

    /// Condition features `(B, C)` for raw clouds of any size.
    pub fn encode_clouds(&self, clouds: &[&[Point3]]) -> Result<Tensor> {
        let n = self.cfg.input_points;
        let mut flat = Vec::with_capacity(clouds.len() * n * 3);
        for c in clouds {
            flat.extend(prepare_cloud(c, n)?.into_iter().flatten());
        }
        let t = Tensor::from_vec(flat, (clouds.len(), n, 3), self.bundle.device())?;
        Ok(self.bundle.cond(&t)?.detach())
    }

    /// Standard-normal `z0 (B, Z)`; row `i` depends only on `seeds[i]`.
    pub fn noise(&self, seeds: &[u64]) -> Result<Tensor> {
        let d = self.cfg.latent_dim;
        let mut v = Vec::with_capacity(seeds.len() * d);
        for &s in seeds {
            let mut rng = seeded_rng(s);
            v.extend((0..d).map(|_| rng.sample::<f32, _>(rand_distr::StandardNormal)));
        }
        Ok(Tensor::from_vec(v, (seeds.len(), d), self.bundle.device())?)
    }

    /// Euler-integrates from `z0` and maps back to decoder latent space.
    pub fn sample_latents(&self, z0: &Tensor, cond: &Tensor) -> Result<Tensor> {
        if !self.has_velocity {
            return Err(PipelineError::InvalidConfig("no diffusion checkpoint loaded".into()));
        }
        let z = euler_sample(z0, Some(cond), &self.bundle.velocity, &self.cfg.sampler()?)?.detach();
        self.destandardize(&z)
    }

    pub fn destandardize(&self, z: &Tensor) -> Result<Tensor> {
        let Some(s) = &self.stats else { return Ok(z.clone()) };
        let dev = z.device();
        let to = |v: &[f64]| Tensor::from_vec(v.iter().map(|&x| x as f32).collect::<Vec<_>>(), (1, v.len()), dev);
        Ok(z.broadcast_mul(&to(&s.std)?)?.broadcast_add(&to(&s.mean)?)?)
    }

    /// Latent of a labelled occupancy sample, the autoencoder ceiling.
    pub fn encode_occupancy(&self, positions: &[[f32; 3]], labels: &[f32], cond: &Tensor) -> Result<Tensor> {
        let dev = self.bundle.device();
        let q = positions.len();
        let pos = Tensor::from_vec(positions.iter().flatten().copied().collect::<Vec<_>>(), (1, q, 3), dev)?;
        let val = Tensor::from_vec(labels.to_vec(), (1, q), dev)?;
        Ok(self.bundle.latent.forward(&pos, &val, self.cfg.encoder_cond.then_some(cond))?.detach())
    }

    /// Field for row `row` of `z` and `cond`.
    pub fn field(&self, z: &Tensor, cond: &Tensor, row: usize) -> Result<DecoderField<'_>> {
        Ok(DecoderField::new(&self.bundle.decoder, z.narrow(0, row, 1)?, Some(cond.narrow(0, row, 1)?)))
    }

    pub fn mise_config(&self, resolution: usize) -> MiseConfig {
        MiseConfig { initial_res: self.cfg.mise_initial.min(resolution), final_res: resolution, batch: 16_384, bounds: Aabb::unit() }
    }
}

/// Seed for the starting noise of output `index` under run seed `seed`.
pub fn z0_seed(seed: u64, index: u64) -> u64 {
    derive_seed(derive_seed(seed, 0x20), index)
}

/// Completes one partial cloud into a mesh.
pub fn infer(cloud: &[Point3], model: &Model, z0_seed: u64, resolution: usize) -> Result<MiseOutput> {
    let cond = model.encode_clouds(&[cloud]).stage("encode")?;
    let z0 = model.noise(&[z0_seed]).stage("sample")?;
    let z = model.sample_latents(&z0, &cond).stage("sample")?;
    let field = model.field(&z, &cond, 0).stage("decode")?;
    mise_extract(&field, &model.mise_config(resolution)).stage("extract")
}

/// Mesh of `infer` or an error if extraction found no surface.
pub fn infer_mesh(cloud: &[Point3], model: &Model, z0_seed: u64, resolution: usize) -> Result<TriangleMesh> {
    let out = infer(cloud, model, z0_seed, resolution)?;
    if out.empty {
        return Err(PipelineError::Stage { stage: "extract", source: Box::new(PipelineError::EmptySurface) });
    }
    Ok(out.mesh)
}
