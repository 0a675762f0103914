//! The two training stages: the function autoencoder jointly with the point
//! encoder, then flow matching on frozen latents.

use std::collections::BTreeMap;

use candle_core::{Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use occdiff_core::{derive_seed, seeded_rng};
use occdiff_model::{fm_loss, fm_loss_with, stage_a_loss, FmDraw, ModelError};
use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, DECODER, LATENT, POINTENC, STAGE_A_MODULES, VELOCITY};
use crate::checkpoint::{Checkpoint, CheckpointKind, LatentStats};
use crate::config::{Stage, TrainConfig};
use crate::data::{chunks, BatchSampler, TrainData};
use crate::{PipelineError, Result};

/// One logged stage-(a) step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepA {
    pub step: usize,
    pub occ: f64,
    pub cd: f64,
    /// Chamfer term as it enters the total, `η_eff · cd`.
    pub cd_weighted: f64,
    pub total: f64,
    pub accuracy: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub step: usize,
    pub loss: f64,
    /// Occupancy accuracy; absent for stage (b).
    pub accuracy: Option<f64>,
}

pub struct StageARun {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepA>,
    pub validation: Vec<Validation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepB {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

pub struct StageBRun {
    pub checkpoint: Checkpoint,
    pub steps: Vec<StepB>,
    pub validation: Vec<Validation>,
    /// Hashes of the frozen modules before and after training.
    pub frozen_before: BTreeMap<String, String>,
    pub frozen_after: BTreeMap<String, String>,
}

fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    let params = ParamsAdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
    Ok(AdamW::new(vars, params)?)
}

/// Backpropagates `loss`, rescales the gradients to global norm `clip` when
/// they exceed it (0 disables clipping) and takes one optimizer step.
/// Returns the norm before clipping.
fn clipped_step(opt: &mut AdamW, vars: &[Var], loss: &Tensor, clip: f64) -> Result<f64> {
    let mut grads = loss.backward()?;
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            sq += scalar(&g.sqr()?.sum_all()?)?;
        }
    }
    let norm = sq.sqrt();
    if clip > 0.0 && norm > clip {
        for v in vars {
            if let Some(g) = grads.remove(v) {
                grads.insert(v, (g * (clip / norm))?);
            }
        }
    }
    opt.step(&grads)?;
    Ok(norm)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn accuracy(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    let pred = logits.gt(0.0)?.to_dtype(labels.dtype())?;
    Ok(scalar(&pred.eq(labels)?.to_dtype(candle_core::DType::F64)?.mean_all()?)?)
}

fn is_divergence(e: &ModelError) -> bool {
    matches!(e, ModelError::NonFinite { .. } | ModelError::SamplerDiverged { .. })
}

/// Mean of the first and last `window` entries.
pub fn head_tail_means(values: &[f64], window: usize) -> (f64, f64) {
    let w = window.min(values.len()).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    (mean(&values[..w.min(values.len())]), mean(&values[values.len().saturating_sub(w)..]))
}

/// Fixed validation subset drawn once from the seed.
fn validation_subset(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut seeded_rng(derive_seed(seed, 0x7a1)));
    idx.truncate(count.min(len).max(1));
    idx.sort_unstable();
    idx
}

struct ForwardA {
    logits: Tensor,
    occ: Tensor,
    cd: Tensor,
    total: Tensor,
}

fn forward_a(bundle: &ModelBundle, data: &TrainData, idx: &[usize], sets: &[usize], cfg: &TrainConfig) -> Result<ForwardA> {
    let b = data.batch(idx, sets, bundle.device())?;
    let enc = bundle.pointenc.forward(&b.clouds)?;
    let z = bundle.latent.forward(&b.positions, &b.labels, cfg.encoder_cond.then_some(&enc.cond))?;
    let logits = bundle.decoder.logits(&z, &b.positions, cfg.decoder_cond.then_some(&enc.cond))?;
    let loss = stage_a_loss(&logits, &b.labels, &enc.coarse, &b.surface, cfg.effective_eta())?;
    Ok(ForwardA { logits, occ: loss.occ, cd: loss.cd, total: loss.total })
}

fn stage_a_checkpoint(bundle: &ModelBundle, cfg: &TrainConfig, step: usize) -> Result<Checkpoint> {
    let modules = STAGE_A_MODULES.iter().map(|m| Ok((m.to_string(), bundle.capture(m)?))).collect::<Result<_>>()?;
    Ok(Checkpoint {
        kind: CheckpointKind::Autoencoder,
        step,
        config: cfg.to_text(),
        modules,
        parents: BTreeMap::new(),
        latent_stats: None,
    })
}

/// Occupancy accuracy over query set 0 of every item.
pub fn held_in_accuracy(bundle: &ModelBundle, data: &TrainData, cfg: &TrainConfig) -> Result<f64> {
    let mut correct = 0.0;
    let mut total = 0usize;
    for idx in chunks(data.len(), cfg.batch) {
        let sets = vec![0; idx.len()];
        let f = forward_a(bundle, data, &idx, &sets, cfg)?;
        let n = f.logits.elem_count();
        correct += accuracy(&f.logits, &data.batch(&idx, &sets, bundle.device())?.labels)? * n as f64;
        total += n;
    }
    Ok(correct / total as f64)
}

fn require_stage(cfg: &TrainConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    cfg.require_implemented()?;
    if cfg.stage != stage {
        return Err(PipelineError::InvalidConfig(format!("config is for stage {}, expected {stage}", cfg.stage)));
    }
    Ok(())
}

/// Trains point encoder, latent encoder and decoder jointly on
/// `L_occ + η·L_CD` with Adam.
pub fn train_stage_a(data: &TrainData, cfg: &TrainConfig, device: &Device) -> Result<StageARun> {
    require_stage(cfg, Stage::Autoencoder)?;
    if data.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let bundle = ModelBundle::new(cfg, device)?;
    let vars: Vec<Var> = STAGE_A_MODULES.iter().flat_map(|m| bundle.store.vars_with_prefix(&format!("{m}."))).collect();
    let mut opt = adam(vars.clone(), cfg.lr)?;
    let mut sampler = BatchSampler::new(data.len(), seeded_rng(derive_seed(cfg.seed, 0xa)));
    let val_idx = validation_subset(data.len(), cfg.val_samples, cfg.seed);
    let nsets = data.items[0].queries.len();

    let mut last_good = stage_a_checkpoint(&bundle, cfg, 0)?;
    let mut steps = Vec::with_capacity(cfg.steps_a);
    let mut validation = Vec::new();
    let diverged = |step: usize, last_good: &Checkpoint| PipelineError::Diverged { step, last_good: Box::new(last_good.clone()) };

    for step in 0..cfg.steps_a {
        opt.set_learning_rate(cfg.lr_schedule.at(cfg.lr, step, cfg.steps_a));
        let idx = sampler.next(cfg.batch.min(data.len()));
        let sets: Vec<usize> = idx.iter().map(|_| sampler.rng().random_range(0..nsets)).collect();
        let f = match forward_a(&bundle, data, &idx, &sets, cfg) {
            Err(PipelineError::Model(e)) if is_divergence(&e) => return Err(diverged(step, &last_good)),
            r => r?,
        };
        let total = scalar(&f.total)?;
        if !total.is_finite() {
            return Err(diverged(step, &last_good));
        }
        let grad_norm = clipped_step(&mut opt, &vars, &f.total, cfg.grad_clip)?;
        let labels = data.batch(&idx, &sets, device)?.labels;
        let cd = scalar(&f.cd)?;
        let rec = StepA {
            step,
            occ: scalar(&f.occ)?,
            cd,
            cd_weighted: cfg.effective_eta() * cd,
            total,
            accuracy: accuracy(&f.logits, &labels)?,
            grad_norm,
        };
        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps_a {
            tracing::info!(target: "occdiff::train", stage = "a", step, occ = rec.occ, cd = rec.cd, cd_weighted = rec.cd_weighted, total = rec.total, accuracy = rec.accuracy, grad_norm);
        }
        steps.push(rec);

        if cfg.val_every > 0 && (step + 1) % cfg.val_every == 0 {
            let sets = vec![0; val_idx.len()];
            let f = match forward_a(&bundle, data, &val_idx, &sets, cfg) {
                Err(PipelineError::Model(e)) if is_divergence(&e) => return Err(diverged(step, &last_good)),
                r => r?,
            };
            let loss = scalar(&f.occ)?;
            let acc = accuracy(&f.logits, &data.batch(&val_idx, &sets, device)?.labels)?;
            tracing::info!(target: "occdiff::train", stage = "a", step = step + 1, val_occ = loss, val_accuracy = acc);
            validation.push(Validation { step: step + 1, loss, accuracy: Some(acc) });
            if loss.is_finite() {
                last_good = stage_a_checkpoint(&bundle, cfg, step + 1)?;
            }
        }
    }
    Ok(StageARun { checkpoint: stage_a_checkpoint(&bundle, cfg, cfg.steps_a)?, steps, validation })
}

/// Digest of the config keys that fix stage-(a) parameter shapes.
pub fn arch_digest(cfg: &TrainConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (k, v) in cfg.entries() {
        if TrainConfig::ARCH_KEYS_A.contains(&k) {
            h.update(format!("{k}={v}\n"));
        }
    }
    hex::encode(h.finalize())
}

/// Checks that `stage_a` is an autoencoder checkpoint whose architecture
/// matches `cfg`.
pub fn check_stage_a(stage_a: &Checkpoint, cfg: &TrainConfig) -> Result<()> {
    if stage_a.kind != CheckpointKind::Autoencoder {
        return Err(PipelineError::InvalidConfig("expected an autoencoder checkpoint".into()));
    }
    for m in STAGE_A_MODULES {
        stage_a.module(m)?;
    }
    let trained = TrainConfig::parse(&stage_a.config)?;
    let (expected, actual) = (arch_digest(&trained), arch_digest(cfg));
    if expected != actual {
        return Err(PipelineError::ChecksumMismatch {
            module: format!("config ({})", trained.arch_differences(cfg).join(", ")),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Frozen targets for flow matching: latents per (item, query set) and one
/// condition per item.
pub struct FrozenTargets {
    /// `[item][set]` latent vectors.
    pub z1: Vec<Vec<Vec<f32>>>,
    pub cond: Vec<Vec<f32>>,
    pub stats: Option<LatentStats>,
}

/// Runs the frozen encoders over every item.
pub fn encode_targets(bundle: &ModelBundle, data: &TrainData, cfg: &TrainConfig) -> Result<FrozenTargets> {
    let nsets = data.items[0].queries.len();
    let mut z1 = vec![Vec::with_capacity(nsets); data.len()];
    let mut cond = Vec::with_capacity(data.len());
    for idx in chunks(data.len(), cfg.batch) {
        let c = bundle.cond(&data.clouds(&idx, bundle.device())?)?.detach();
        cond.extend(c.to_vec2::<f32>()?);
        for s in 0..nsets {
            let b = data.batch(&idx, &vec![s; idx.len()], bundle.device())?;
            let z = bundle.latent.forward(&b.positions, &b.labels, cfg.encoder_cond.then_some(&c))?.detach();
            for (k, row) in idx.iter().zip(z.to_vec2::<f32>()?) {
                z1[*k].push(row);
            }
        }
    }
    let stats = if cfg.latent_norm {
        let all: Vec<&Vec<f32>> = z1.iter().flatten().collect();
        let n = all.len() as f64;
        let dim = all[0].len();
        let mean: Vec<f64> = (0..dim).map(|d| all.iter().map(|z| z[d] as f64).sum::<f64>() / n).collect();
        let std: Vec<f64> =
            (0..dim).map(|d| (all.iter().map(|z| (z[d] as f64 - mean[d]).powi(2)).sum::<f64>() / n).sqrt().max(1e-6)).collect();
        for z in z1.iter_mut().flatten() {
            for d in 0..dim {
                z[d] = ((z[d] as f64 - mean[d]) / std[d]) as f32;
            }
        }
        Some(LatentStats { mean, std })
    } else {
        None
    };
    Ok(FrozenTargets { z1, cond, stats })
}

fn stack(rows: &[&Vec<f32>], device: &Device) -> Result<Tensor> {
    let d = rows[0].len();
    let v: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(v, (rows.len(), d), device)?)
}

/// Trains the velocity network on frozen latents and conditions.
pub fn train_stage_b(data: &TrainData, stage_a: &Checkpoint, cfg: &TrainConfig, device: &Device) -> Result<StageBRun> {
    require_stage(cfg, Stage::Diffusion)?;
    if data.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    check_stage_a(stage_a, cfg)?;
    let bundle = ModelBundle::new(cfg, device)?;
    bundle.load(stage_a)?;
    let frozen = [POINTENC, LATENT, DECODER];
    let hashes = |b: &ModelBundle| frozen.iter().map(|m| Ok((m.to_string(), b.hash(m)?))).collect::<Result<BTreeMap<_, _>>>();
    let frozen_before = hashes(&bundle)?;

    let targets = encode_targets(&bundle, data, cfg)?;
    // cond_of[i]: whose condition item i is trained with
    let mut cond_of: Vec<usize> = (0..data.len()).collect();
    if cfg.shuffle_pairs && data.len() > 1 {
        let mut perm = cond_of.clone();
        perm.shuffle(&mut seeded_rng(derive_seed(cfg.seed, 0x5f)));
        for k in 0..perm.len() {
            cond_of[perm[k]] = perm[(k + 1) % perm.len()];
        }
    }

    let vars = bundle.store.vars_with_prefix(&format!("{VELOCITY}."));
    let mut opt = adam(vars.clone(), cfg.lr)?;
    let mut sampler = BatchSampler::new(data.len(), seeded_rng(derive_seed(cfg.seed, 0xb)));
    let mut noise_rng = seeded_rng(derive_seed(cfg.seed, 0xb0));
    let nsets = targets.z1[0].len();
    let val_idx = validation_subset(data.len(), cfg.val_samples, cfg.seed);
    let val_draws: Vec<FmDraw> = (0..4)
        .map(|k| FmDraw::sample(val_idx.len(), cfg.latent_dim, bundle.store.dtype(), device, &mut seeded_rng(derive_seed(cfg.seed, 0xc0 + k))))
        .collect::<std::result::Result<_, _>>()?;
    let ckpt = |step: usize| -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CheckpointKind::Diffusion,
            step,
            config: cfg.to_text(),
            modules: BTreeMap::from([(VELOCITY.to_string(), bundle.capture(VELOCITY)?)]),
            parents: stage_a.checksums(),
            latent_stats: targets.stats.clone(),
        })
    };
    let mut last_good = ckpt(0)?;
    let mut steps = Vec::with_capacity(cfg.steps_b);
    let mut validation = Vec::new();

    for step in 0..cfg.steps_b {
        opt.set_learning_rate(cfg.lr_schedule.at(cfg.lr, step, cfg.steps_b));
        let idx = sampler.next(cfg.fm_batch.min(data.len()));
        let z_rows: Vec<&Vec<f32>> = idx.iter().map(|&i| &targets.z1[i][sampler.rng().random_range(0..nsets)]).collect();
        let c_rows: Vec<&Vec<f32>> = idx.iter().map(|&i| &targets.cond[cond_of[i]]).collect();
        let (z1, c) = (stack(&z_rows, device)?, stack(&c_rows, device)?);
        let loss = match fm_loss(&z1, Some(&c), &bundle.velocity, &mut noise_rng) {
            Err(e) if is_divergence(&e) => return Err(PipelineError::Diverged { step, last_good: Box::new(last_good) }),
            r => r?,
        };
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(PipelineError::Diverged { step, last_good: Box::new(last_good) });
        }
        let grad_norm = clipped_step(&mut opt, &vars, &loss, cfg.grad_clip)?;
        if step % cfg.log_every.max(1) == 0 || step + 1 == cfg.steps_b {
            tracing::info!(target: "occdiff::train", stage = "b", step, fm_loss = value, grad_norm);
        }
        steps.push(StepB { step, loss: value, grad_norm });

        if cfg.val_every > 0 && (step + 1) % cfg.val_every == 0 {
            let z_rows: Vec<&Vec<f32>> = val_idx.iter().map(|&i| &targets.z1[i][0]).collect();
            let c_rows: Vec<&Vec<f32>> = val_idx.iter().map(|&i| &targets.cond[cond_of[i]]).collect();
            let (z1, c) = (stack(&z_rows, device)?, stack(&c_rows, device)?);
            let mut total = 0.0;
            for d in &val_draws {
                match fm_loss_with(d, &z1, Some(&c), &bundle.velocity) {
                    Err(e) if is_divergence(&e) => return Err(PipelineError::Diverged { step, last_good: Box::new(last_good) }),
                    r => total += scalar(&r?)?,
                }
            }
            let loss = total / val_draws.len() as f64;
            tracing::info!(target: "occdiff::train", stage = "b", step = step + 1, val_fm_loss = loss);
            validation.push(Validation { step: step + 1, loss, accuracy: None });
            if loss.is_finite() {
                last_good = ckpt(step + 1)?;
            }
        }
    }
    let frozen_after = hashes(&bundle)?;
    if frozen_after != frozen_before {
        return Err(PipelineError::InvalidConfig("frozen stage-(a) parameters changed during flow matching".into()));
    }
    Ok(StageBRun { checkpoint: ckpt(cfg.steps_b)?, steps, validation, frozen_before, frozen_after })
}
