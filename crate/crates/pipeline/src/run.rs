//! End-to-end runs: both training stages followed by evaluation of both
//! latent sources, and the ablation grid built from them.

use std::fmt::Write as _;

use candle_core::Device;
use occdiff_core::evalkit::{Aggregate, EvalReport};
use serde::{Deserialize, Serialize};

use crate::config::{Stage, TrainConfig};
use crate::data::TrainData;
use crate::eval::{eval_items, evaluate_source, Source};
use crate::infer::Model;
use crate::train::{train_stage_a, train_stage_b, StageARun, StageBRun};
use crate::{PipelineError, Result};

pub struct PipelineRun {
    pub stage_a: StageARun,
    pub stage_b: StageBRun,
    pub latent: EvalReport,
    pub diffusion: EvalReport,
}

impl PipelineRun {
    /// Both evaluation reports as JSON lines, source-tagged.
    pub fn metrics_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (src, rep) in [(Source::Latent, &self.latent), (Source::Diffusion, &self.diffusion)] {
            for line in rep.to_jsonl()?.lines() {
                let v: serde_json::Value = serde_json::from_str(line)?;
                out.push_str(&serde_json::to_string(&serde_json::json!({ "source": src, "record": v }))?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// Trains both stages on `data` and evaluates on its first
/// `cfg.eval_records` items.
pub fn run_pipeline(data: &TrainData, cfg: &TrainConfig, device: &Device) -> Result<PipelineRun> {
    let cfg_a = TrainConfig { stage: Stage::Autoencoder, ..cfg.clone() };
    let cfg_b = TrainConfig { stage: Stage::Diffusion, ..cfg.clone() };
    let stage_a = train_stage_a(data, &cfg_a, device)?;
    let stage_b = train_stage_b(data, &stage_a.checkpoint, &cfg_b, device)?;
    let model = Model::load(&stage_a.checkpoint, Some(&stage_b.checkpoint), device)?;
    let items = eval_items(data, cfg.eval_records);
    let latent = evaluate_source(&model, data, &items, Source::Latent, cfg.resolution, cfg.seed, None)?;
    let diffusion = evaluate_source(&model, data, &items, Source::Diffusion, cfg.resolution, cfg.seed, None)?;
    Ok(PipelineRun { stage_a, stage_b, latent, diffusion })
}

/// Ablation switches of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub cd_loss: bool,
    pub encoder_cond: bool,
    pub decoder_cond: bool,
}

impl Flags {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig { cd_loss: self.cd_loss, encoder_cond: self.encoder_cond, decoder_cond: self.decoder_cond, ..cfg.clone() }
    }
}

/// `{cd_loss} × {encoder_cond}` with decoder conditioning on.
pub fn default_grid() -> Vec<Flags> {
    let mut g = Vec::new();
    for cd_loss in [true, false] {
        for encoder_cond in [true, false] {
            g.push(Flags { cd_loss, encoder_cond, decoder_cond: true });
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub flags: Flags,
    pub latent: Option<Aggregate>,
    pub diffusion: Option<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for c in &self.cells {
            s.push_str(&serde_json::to_string(c)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// One row per cell and source.
    pub fn table(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "no" };
        let mut s = String::from("CD   Encoder  Decoder  Source     CD_L2(x1e-3)  CD_L1(x1e-3)  F-Score  IoU\n");
        for c in &self.cells {
            let f = c.flags;
            for (src, agg) in [("Latent", &c.latent), ("Diffusion", &c.diffusion)] {
                let _ = match (agg, &c.error) {
                    (Some(a), _) => writeln!(
                        s,
                        "{:<4} {:<8} {:<8} {:<10} {:>12.4} {:>13.4} {:>8.4}  {}",
                        yn(f.cd_loss),
                        yn(f.encoder_cond),
                        yn(f.decoder_cond),
                        src,
                        a.cd_l2_e3,
                        a.cd_l1_e3,
                        a.f_score,
                        a.iou.map_or("-".into(), |v| format!("{v:.4}"))
                    ),
                    (None, e) => writeln!(
                        s,
                        "{:<4} {:<8} {:<8} {:<10} failed: {}",
                        yn(f.cd_loss),
                        yn(f.encoder_cond),
                        yn(f.decoder_cond),
                        src,
                        e.as_deref().unwrap_or("-")
                    ),
                };
            }
        }
        s
    }
}

/// Runs the full pipeline for every cell of `grid`. A failing cell is
/// recorded and the grid continues.
pub fn run_ablation_matrix(data: &TrainData, cfg: &TrainConfig, grid: &[Flags], device: &Device) -> Result<AblationReport> {
    if data.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut report = AblationReport::default();
    for flags in grid {
        tracing::info!(target: "occdiff::ablate", cd_loss = flags.cd_loss, encoder_cond = flags.encoder_cond, decoder_cond = flags.decoder_cond, "cell");
        let cell = match run_pipeline(data, &flags.apply(cfg), device) {
            Ok(run) => AblationCell { flags: *flags, latent: Some(run.latent.aggregate), diffusion: Some(run.diffusion.aggregate), error: None },
            Err(e) => AblationCell { flags: *flags, latent: None, diffusion: None, error: Some(e.to_string()) },
        };
        report.cells.push(cell);
    }
    Ok(report)
}
