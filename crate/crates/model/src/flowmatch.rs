//! Flow matching in latent space: the straight-line path between noise and
//! data, the velocity-regression objective, a DiT-style velocity network
//! over latent tokens and the explicit Euler sampler.

use candle_core::{DType, Device, Tensor, D};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{check_finite, LayerNorm, Linear, Mlp, SelfAttention};
use crate::params::Init;
use crate::{ModelError, Result};

/// A point on the path at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub z: Vec<f64>,
    pub t: f64,
}

/// `(1 − t)·z0 + t·z1`.
pub fn interpolate(z0: &[f64], z1: &[f64], t: f64) -> Result<FlowState> {
    if z0.len() != z1.len() {
        return Err(ModelError::Shape(format!("endpoints of length {} and {}", z0.len(), z1.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    let z = z0.iter().zip(z1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    Ok(FlowState { z, t })
}

/// A time-dependent velocity field `h(z, t, c)` on batches `(B, D)`.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: &Tensor, cond: Option<&Tensor>) -> Result<Tensor>;
}

/// Number of Euler steps; the step size is always `1 / steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    steps: usize,
}

impl SamplerConfig {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(ModelError::InvalidArgument("sampler needs at least one step".into()));
        }
        Ok(SamplerConfig { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { steps: 50 }
    }
}

/// Integrates `dz/dt = h(z, t, c)` from `t = 0` to `t = 1`.
pub fn euler_sample(z0: &Tensor, cond: Option<&Tensor>, model: &dyn VelocityField, cfg: &SamplerConfig) -> Result<Tensor> {
    let (b, _) = z0.dims2()?;
    let dt = cfg.dt();
    let mut z = z0.clone();
    for step in 0..cfg.steps {
        let t = Tensor::full(step as f64 / cfg.steps as f64, b, z0.device())?.to_dtype(z0.dtype())?;
        let v = model.velocity(&z, &t, cond)?;
        z = (z + (v * dt)?)?;
        if check_finite(&z, "euler").is_err() {
            return Err(ModelError::SamplerDiverged { step });
        }
    }
    Ok(z)
}

/// One draw of the training noise and times.
#[derive(Debug, Clone)]
pub struct FmDraw {
    /// `(B, D)` standard normal.
    pub z0: Tensor,
    /// `(B,)` uniform on `[0, 1]`.
    pub t: Tensor,
}

impl FmDraw {
    pub fn sample<R: Rng + ?Sized>(batch: usize, dim: usize, dtype: DType, device: &Device, rng: &mut R) -> Result<Self> {
        let z0: Vec<f64> = (0..batch * dim).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
        Ok(FmDraw {
            z0: Tensor::from_vec(z0, (batch, dim), device)?.to_dtype(dtype)?,
            t: Tensor::from_vec(t, batch, device)?.to_dtype(dtype)?,
        })
    }
}

/// `mean_b ‖(z1 − z0) − h(z_t, t, c)‖²` for a given draw.
pub fn fm_loss_with(draw: &FmDraw, z1: &Tensor, cond: Option<&Tensor>, model: &dyn VelocityField) -> Result<Tensor> {
    if draw.z0.dims() != z1.dims() {
        return Err(ModelError::Shape(format!("noise {:?} vs latent {:?}", draw.z0.dims(), z1.dims())));
    }
    let t = draw.t.unsqueeze(1)?;
    let zt = (draw.z0.broadcast_mul(&(1.0 - &t)?)? + z1.broadcast_mul(&t)?)?;
    let target = (z1 - &draw.z0)?;
    let h = model.velocity(&zt, &draw.t, cond)?;
    if h.dims() != z1.dims() {
        return Err(ModelError::Shape(format!("velocity {:?} vs latent {:?}", h.dims(), z1.dims())));
    }
    let loss = (target - h)?.sqr()?.sum(D::Minus1)?.mean_all()?;
    check_finite(&loss, "fm_loss")?;
    Ok(loss)
}

/// Flow-matching loss with `z0 ~ N(0, I)` and `t ~ U[0, 1]` drawn from `rng`.
pub fn fm_loss<R: Rng + ?Sized>(z1: &Tensor, cond: Option<&Tensor>, model: &dyn VelocityField, rng: &mut R) -> Result<Tensor> {
    let (b, d) = z1.dims2()?;
    let draw = FmDraw::sample(b, d, z1.dtype(), z1.device(), rng)?;
    fm_loss_with(&draw, z1, cond, model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityConfig {
    pub latent_dim: usize,
    /// Token count; `tokens · token_width == latent_dim`.
    pub tokens: usize,
    pub token_width: usize,
    pub hidden: usize,
    pub depth: usize,
    pub heads: usize,
    /// Zero disables the condition pathway.
    pub cond_dim: usize,
    pub mlp_ratio: usize,
    /// Width of the sinusoidal time features.
    pub freq_dim: usize,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        VelocityConfig {
            latent_dim: 128,
            tokens: 16,
            token_width: 8,
            hidden: 512,
            depth: 12,
            heads: 16,
            cond_dim: 512,
            mlp_ratio: 4,
            freq_dim: 256,
        }
    }
}

#[derive(Debug, Clone)]
struct DitBlock {
    ada: Linear,
    norm: LayerNorm,
    attn: SelfAttention,
    mlp: Mlp,
}

/// `x·(1 + scale) + shift` with per-sample modulation broadcast over tokens.
fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale.unsqueeze(1)? + 1.0)?)?.broadcast_add(&shift.unsqueeze(1)?)?)
}

impl DitBlock {
    fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let m = self.ada.forward(&c.silu()?)?.chunk(6, D::Minus1)?;
        let h = self.attn.forward(&modulate(&self.norm.forward(x)?, &m[0], &m[1])?)?;
        let x = (x + h.broadcast_mul(&m[2].unsqueeze(1)?)?)?;
        let h = self.mlp.forward(&modulate(&self.norm.forward(&x)?, &m[3], &m[4])?)?;
        Ok((&x + h.broadcast_mul(&m[5].unsqueeze(1)?)?)?)
    }
}

/// Transformer velocity network over the latent split into tokens.
///
/// Tokens get a linear embedding plus learnable positional embeddings; time
/// and condition embeddings are summed and drive adaptive layer norm
/// (shift, scale and gate) in every block.
#[derive(Debug, Clone)]
pub struct VelocityModel {
    cfg: VelocityConfig,
    embed: Linear,
    pos: Tensor,
    t_mlp: Mlp,
    cond_proj: Option<Linear>,
    blocks: Vec<DitBlock>,
    final_ada: Linear,
    final_norm: LayerNorm,
    out: Linear,
    freqs: Tensor,
}

impl VelocityModel {
    pub fn new(init: &mut Init, prefix: &str, cfg: &VelocityConfig) -> Result<Self> {
        if cfg.tokens * cfg.token_width != cfg.latent_dim {
            return Err(ModelError::InvalidArgument(format!(
                "token layout {}x{} does not cover latent dim {}",
                cfg.tokens, cfg.token_width, cfg.latent_dim
            )));
        }
        if cfg.freq_dim < 2 || cfg.freq_dim % 2 != 0 {
            return Err(ModelError::InvalidArgument("freq_dim must be even and positive".into()));
        }
        let h = cfg.hidden;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                Ok(DitBlock {
                    ada: Linear::new(init, &format!("{p}.ada"), h, 6 * h)?,
                    norm: LayerNorm::plain(),
                    attn: SelfAttention::new(init, &format!("{p}.attn"), h, cfg.heads)?,
                    mlp: Mlp::new(init, &format!("{p}.mlp"), h, cfg.mlp_ratio * h, h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let half = cfg.freq_dim / 2;
        let freqs: Vec<f64> = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp()).collect();
        Ok(VelocityModel {
            cfg: cfg.clone(),
            embed: Linear::new(init, &format!("{prefix}.embed"), cfg.token_width, h)?,
            pos: init.normal(&format!("{prefix}.pos"), &[1, cfg.tokens, h], 0.02)?,
            t_mlp: Mlp::new(init, &format!("{prefix}.t_embed"), cfg.freq_dim, h, h)?,
            cond_proj: if cfg.cond_dim > 0 { Some(Linear::new(init, &format!("{prefix}.cond_proj"), cfg.cond_dim, h)?) } else { None },
            blocks,
            final_ada: Linear::new(init, &format!("{prefix}.final_ada"), h, 2 * h)?,
            final_norm: LayerNorm::plain(),
            out: Linear::new(init, &format!("{prefix}.out"), h, cfg.token_width)?,
            freqs: Tensor::from_vec(freqs, (1, half), &init.device())?.to_dtype(init.dtype())?,
        })
    }

    pub fn config(&self) -> &VelocityConfig {
        &self.cfg
    }

    /// Sinusoidal features of `1000·t`, `(B, freq_dim)`.
    fn time_features(&self, t: &Tensor) -> Result<Tensor> {
        let args = (t.unsqueeze(1)? * 1000.0)?.broadcast_mul(&self.freqs)?;
        Ok(Tensor::cat(&[args.cos()?, args.sin()?], D::Minus1)?)
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, z: &Tensor, t: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        let (b, d) = z.dims2()?;
        if d != self.cfg.latent_dim || t.dims() != [b] {
            return Err(ModelError::Shape(format!("velocity input z {:?}, t {:?}", z.dims(), t.dims())));
        }
        let x = self.embed.forward(&z.reshape((b, self.cfg.tokens, self.cfg.token_width))?)?;
        let mut x = x.broadcast_add(&self.pos)?;
        let mut c = self.t_mlp.forward(&self.time_features(t)?)?;
        match (&self.cond_proj, cond) {
            (Some(p), Some(y)) => c = (c + p.forward(y)?)?,
            (Some(_), None) => return Err(ModelError::InvalidArgument("velocity model expects a condition".into())),
            (None, _) => {}
        }
        for blk in &self.blocks {
            x = blk.forward(&x, &c)?;
        }
        let m = self.final_ada.forward(&c.silu()?)?.chunk(2, D::Minus1)?;
        let x = modulate(&self.final_norm.forward(&x)?, &m[0], &m[1])?;
        let v = self.out.forward(&x)?.reshape((b, d))?;
        check_finite(&v, "velocity.out")?;
        Ok(v)
    }
}
