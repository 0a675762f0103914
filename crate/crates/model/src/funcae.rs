//! Occupancy function autoencoder: a permutation-invariant latent encoder
//! over labelled query points and a residual occupancy decoder conditioned
//! on the latent and the point-cloud feature.

use candle_core::{Tensor, D};

use crate::nn::{add_rows, check_finite, gelu, Linear};
use crate::params::Init;
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncAeConfig {
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub decoder_blocks: usize,
    pub pooling: Pooling,
    /// Feed occupancy labels to the encoder as ±1 instead of 0/1.
    pub signed_values: bool,
    /// Latent encoder sees the condition feature.
    pub encoder_cond: bool,
    /// Decoder sees the condition feature.
    pub decoder_cond: bool,
    /// Sine/cosine octaves appended to raw positions; 0 feeds coordinates only.
    pub pos_octaves: usize,
}

impl Default for FuncAeConfig {
    fn default() -> Self {
        FuncAeConfig {
            latent_dim: 128,
            cond_dim: 512,
            encoder_width: 256,
            decoder_width: 256,
            decoder_blocks: 5,
            pooling: Pooling::Mean,
            signed_values: true,
            encoder_cond: true,
            decoder_cond: true,
            pos_octaves: 0,
        }
    }
}

impl FuncAeConfig {
    /// Width of the encoded position.
    pub fn position_width(&self) -> usize {
        3 * (1 + 2 * self.pos_octaves)
    }
}

/// `[p, sin(2ᵏπp), cos(2ᵏπp)]` for `k < octaves`, along the last axis.
pub fn encode_positions(p: &Tensor, octaves: usize) -> Result<Tensor> {
    if octaves == 0 {
        return Ok(p.clone());
    }
    let freqs: Vec<f64> = (0..octaves).map(|k| std::f64::consts::PI * (1u64 << k) as f64).collect();
    let mut shape = p.dims().to_vec();
    let last = shape.len() - 1;
    let freqs = Tensor::from_vec(freqs, octaves, p.device())?.to_dtype(p.dtype())?;
    let arg = p.unsqueeze(D::Minus1)?.broadcast_mul(&freqs)?;
    shape[last] *= octaves;
    let arg = arg.reshape(shape)?;
    Ok(Tensor::cat(&[p, &arg.sin()?, &arg.cos()?], D::Minus1)?)
}

fn pool(x: &Tensor, how: Pooling) -> Result<Tensor> {
    Ok(match how {
        Pooling::Mean => x.mean(1)?,
        Pooling::Max => x.max(1)?,
    })
}

/// `E(p, v, c) -> z`.
///
/// Per-query features from `(p, v)` are pooled, the pooled context is fed
/// back to every query for a second per-query stage, pooled again and
/// fused with the condition feature.
#[derive(Debug, Clone)]
pub struct LatentEncoder {
    cfg: FuncAeConfig,
    fc_in: Linear,
    fc_a: Linear,
    fc_b: Linear,
    fc_c: Linear,
    fuse: Linear,
    out: Linear,
}

impl LatentEncoder {
    pub fn new(init: &mut Init, prefix: &str, cfg: &FuncAeConfig) -> Result<Self> {
        let w = cfg.encoder_width;
        let fused_in = w + if cfg.encoder_cond { cfg.cond_dim } else { 0 };
        Ok(LatentEncoder {
            cfg: cfg.clone(),
            fc_in: Linear::new(init, &format!("{prefix}.fc_in"), cfg.position_width() + 1, w)?,
            fc_a: Linear::new(init, &format!("{prefix}.fc_a"), w, w)?,
            fc_b: Linear::new(init, &format!("{prefix}.fc_b"), 2 * w, w)?,
            fc_c: Linear::new(init, &format!("{prefix}.fc_c"), w, w)?,
            fuse: Linear::new(init, &format!("{prefix}.fuse"), fused_in, w)?,
            out: Linear::new(init, &format!("{prefix}.out"), w, cfg.latent_dim)?,
        })
    }

    /// `positions (B, Q, 3)`, `values (B, Q)` in {0, 1}, `cond (B, C)`.
    pub fn forward(&self, positions: &Tensor, values: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let (b, q, _) = positions.dims3()?;
        if values.dims() != [b, q] {
            return Err(ModelError::Shape(format!("values {:?} do not match positions {:?}", values.dims(), positions.dims())));
        }
        let v = if self.cfg.signed_values { values.affine(2.0, -1.0)? } else { values.clone() };
        let x = Tensor::cat(&[&encode_positions(positions, self.cfg.pos_octaves)?, &v.unsqueeze(2)?], D::Minus1)?;
        let h = self.fc_a.forward(&gelu(&self.fc_in.forward(&x)?)?)?;
        let g = pool(&h, self.cfg.pooling)?;
        let ctx = g.unsqueeze(1)?.broadcast_as(h.shape())?;
        let h = gelu(&self.fc_b.forward(&Tensor::cat(&[&gelu(&h)?, &ctx], D::Minus1)?)?)?;
        let h = self.fc_c.forward(&h)?;
        let g = gelu(&pool(&h, self.cfg.pooling)?)?;
        let g = match (self.cfg.encoder_cond, cond) {
            (true, Some(c)) => Tensor::cat(&[&g, c], D::Minus1)?,
            (true, None) => return Err(ModelError::InvalidArgument("latent encoder configured with a condition but none given".into())),
            (false, _) => g,
        };
        let z = self.out.forward(&gelu(&self.fuse.forward(&g)?)?)?;
        check_finite(&z, "latent_encoder.out")?;
        Ok(z)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    cond: Linear,
    fc0: Linear,
    fc1: Linear,
}

/// `f(z, p, c) -> logit`, evaluated independently at every position.
#[derive(Debug, Clone)]
pub struct OccDecoder {
    cfg: FuncAeConfig,
    fc_p: Linear,
    blocks: Vec<ResBlock>,
    out: Linear,
}

impl OccDecoder {
    pub fn new(init: &mut Init, prefix: &str, cfg: &FuncAeConfig) -> Result<Self> {
        let w = cfg.decoder_width;
        let zc = cfg.latent_dim + if cfg.decoder_cond { cfg.cond_dim } else { 0 };
        let blocks = (0..cfg.decoder_blocks)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                Ok(ResBlock {
                    cond: Linear::new(init, &format!("{p}.cond"), zc, w)?,
                    fc0: Linear::new(init, &format!("{p}.fc0"), w, w)?,
                    fc1: Linear::new(init, &format!("{p}.fc1"), w, w)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OccDecoder {
            cfg: cfg.clone(),
            fc_p: Linear::new(init, &format!("{prefix}.fc_p"), cfg.position_width(), w)?,
            blocks,
            out: Linear::new(init, &format!("{prefix}.out"), w, 1)?,
        })
    }

    pub fn uses_cond(&self) -> bool {
        self.cfg.decoder_cond
    }

    /// Occupancy logits `(B, Q)` for `positions (B, Q, 3)`, `z (B, Z)`,
    /// `cond (B, C)`.
    pub fn logits(&self, z: &Tensor, positions: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let (b, _, _) = positions.dims3()?;
        if z.dims() != [b, self.cfg.latent_dim] {
            return Err(ModelError::Shape(format!("latent {:?}, expected [{b}, {}]", z.dims(), self.cfg.latent_dim)));
        }
        let zc = match (self.cfg.decoder_cond, cond) {
            (true, Some(c)) => Tensor::cat(&[z, c], D::Minus1)?,
            (true, None) => return Err(ModelError::InvalidArgument("decoder configured with a condition but none given".into())),
            (false, _) => z.clone(),
        };
        let mut h = self.fc_p.forward(&encode_positions(positions, self.cfg.pos_octaves)?)?;
        for blk in &self.blocks {
            h = add_rows(&h, &blk.cond.forward(&zc)?)?;
            let dx = blk.fc1.forward(&gelu(&blk.fc0.forward(&gelu(&h)?)?)?)?;
            h = (h + dx)?;
        }
        let logits = self.out.forward(&gelu(&h)?)?.squeeze(2)?;
        check_finite(&logits, "decoder.out")?;
        Ok(logits)
    }

    /// Occupancy probabilities, the sigmoid of [`OccDecoder::logits`].
    pub fn probabilities(&self, z: &Tensor, positions: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits(z, positions, cond)?)?)
    }
}

/// Binary cross-entropy from logits, summed over queries and averaged over
/// the batch: `softplus(x) − y·x`.
pub fn bce_from_logits(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if logits.dims() != labels.dims() {
        return Err(ModelError::Shape(format!("logits {:?} vs labels {:?}", logits.dims(), labels.dims())));
    }
    let softplus = (logits.relu()? + (logits.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    let per = (softplus - (labels * logits)?)?;
    Ok(per.sum(D::Minus1)?.mean_all()?)
}

/// Stage-(a) objective and its parts, each averaged over the batch.
#[derive(Debug, Clone)]
pub struct StageALoss {
    pub total: Tensor,
    pub occ: Tensor,
    pub cd: Tensor,
}

/// `L = L_occ + η · L_CD`. With `η = 0` the total is `L_occ` itself; the
/// Chamfer term is still computed so it can be logged.
pub fn stage_a_loss(logits: &Tensor, labels: &Tensor, coarse: &Tensor, gt_surface: &Tensor, eta: f64) -> Result<StageALoss> {
    if !(eta >= 0.0) {
        return Err(ModelError::InvalidArgument(format!("η must be non-negative, got {eta}")));
    }
    let occ = bce_from_logits(logits, labels)?;
    let cd = crate::pointenc::chamfer_l2(coarse, gt_surface)?.mean_all()?;
    let total = if eta == 0.0 { occ.clone() } else { (&occ + (&cd * eta)?)? };
    Ok(StageALoss { total, occ, cd })
}
