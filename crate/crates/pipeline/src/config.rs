//! Flat `key = value` configuration with two scale profiles.
//!
//! Lines starting with `#` are comments. Unknown keys are errors. Values
//! given on the command line override the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use occdiff_model::{FuncAeConfig, PointEncoderConfig, Pooling, SamplerConfig, VelocityConfig};

use crate::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full-size settings of the reference experiments.
    Paper,
    /// Reduced widths, depths and budgets for a single CPU.
    Desk,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(format!("unknown profile {s:?} (paper|desk)")),
        }
    }
}

/// Which half of the two-stage schedule a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Autoencoder,
    Diffusion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Autoencoder => "autoencoder",
            Stage::Diffusion => "diffusion",
        })
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "autoencoder" => Ok(Stage::Autoencoder),
            "diffusion" => Ok(Stage::Diffusion),
            _ => Err(format!("unknown stage {s:?} (autoencoder|diffusion)")),
        }
    }
}

/// What the latent encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentSource {
    /// Labelled occupancy queries.
    Occupancy,
    /// Surface points only; accepted by the parser, rejected at build time.
    Point,
}

impl fmt::Display for LatentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentSource::Occupancy => "occupancy",
            LatentSource::Point => "point",
        })
    }
}

impl FromStr for LatentSource {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "occupancy" => Ok(LatentSource::Occupancy),
            "point" => Ok(LatentSource::Point),
            _ => Err(format!("unknown latent source {s:?} (occupancy|point)")),
        }
    }
}

/// Comma-separated list of widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl fmt::Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&s.join(","))
    }
}

impl FromStr for Widths {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect::<std::result::Result<_, _>>().map(Widths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolingKey(pub Pooling);

impl fmt::Display for PoolingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        })
    }
}

impl FromStr for PoolingKey {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(PoolingKey(Pooling::Mean)),
            "max" => Ok(PoolingKey(Pooling::Max)),
            _ => Err(format!("unknown pooling {s:?} (mean|max)")),
        }
    }
}

/// Learning-rate schedule over a stage's steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Learning rate at `step` of `total`.
    pub fn at(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => 0.5 * lr * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(format!("unknown schedule {s:?} (constant|cosine)")),
        }
    }
}

macro_rules! config_struct {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct TrainConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl TrainConfig {
            /// Every key in declaration order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| format!("{key} = {value:?}: {e}"))?;
                    })*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }
        }
    };
}

config_struct! {
    profile: Profile,
    stage: Stage,
    seed: u64,
    /// Adam learning rate, both stages.
    lr: f64,
    /// Global gradient-norm clip; 0 disables it.
    grad_clip: f64,
    lr_schedule: LrSchedule,
    /// Stage-(a) batch size.
    batch: usize,
    /// Stage-(b) batch size.
    fm_batch: usize,
    /// Weight of the Chamfer term in the stage-(a) loss.
    eta: f64,
    latent_dim: usize,
    cond_dim: usize,
    /// Query points per occupancy sample.
    query_count: usize,
    /// Occupancy samples kept per shape; the first is the stored one.
    query_sets: usize,
    dit_depth: usize,
    dit_hidden: usize,
    dit_heads: usize,
    /// Consecutive latent tokens merged into one transformer token.
    patch_size: usize,
    dit_tokens: usize,
    dit_token_width: usize,
    dit_mlp_ratio: usize,
    dit_freq_dim: usize,
    sampler_steps: usize,
    /// Cells per axis of the extraction lattice.
    resolution: usize,
    mise_initial: usize,
    steps_a: usize,
    steps_b: usize,
    cd_loss: bool,
    encoder_cond: bool,
    decoder_cond: bool,
    latent_source: LatentSource,
    /// Per-point decoder tokens; accepted by the parser, rejected at build time.
    decoder_tokens: bool,
    pe_k: usize,
    pe_widths: Widths,
    pe_centers: usize,
    pe_width: usize,
    pe_heads: usize,
    pe_layers: usize,
    coarse_points: usize,
    /// Partial-cloud points fed to the encoder after farthest-point sampling.
    input_points: usize,
    enc_width: usize,
    dec_width: usize,
    dec_blocks: usize,
    pos_octaves: usize,
    pooling: PoolingKey,
    signed_values: bool,
    /// Ground-truth surface points per Chamfer term.
    cd_points: usize,
    /// Standardize latents per dimension before flow matching.
    latent_norm: bool,
    /// Control run: pair each latent with another shape's condition.
    shuffle_pairs: bool,
    val_every: usize,
    val_samples: usize,
    log_every: usize,
    /// Surface samples per mesh for Chamfer and F-score.
    eval_samples: usize,
    /// Uniform samples for volumetric IoU.
    iou_samples: usize,
    /// Records evaluated per run (0 = all).
    eval_records: usize,
}

impl TrainConfig {
    /// The reference hyperparameters. Budgets that the reference leaves
    /// open use the desk values.
    pub fn paper() -> Self {
        TrainConfig {
            profile: Profile::Paper,
            stage: Stage::Autoencoder,
            seed: 0,
            lr: 1e-4,
            grad_clip: 0.0,
            lr_schedule: LrSchedule::Constant,
            batch: 64,
            fm_batch: 64,
            eta: 1000.0,
            latent_dim: 128,
            cond_dim: 512,
            query_count: 1000,
            query_sets: 1,
            dit_depth: 12,
            dit_hidden: 512,
            dit_heads: 16,
            patch_size: 1,
            dit_tokens: 16,
            dit_token_width: 8,
            dit_mlp_ratio: 4,
            dit_freq_dim: 256,
            sampler_steps: 50,
            resolution: 80,
            mise_initial: 16,
            steps_a: 2000,
            steps_b: 2000,
            cd_loss: true,
            encoder_cond: true,
            decoder_cond: true,
            latent_source: LatentSource::Occupancy,
            decoder_tokens: false,
            pe_k: 16,
            pe_widths: Widths(vec![64, 128, 256]),
            pe_centers: 128,
            pe_width: 512,
            pe_heads: 8,
            pe_layers: 4,
            coarse_points: 256,
            input_points: 512,
            enc_width: 256,
            dec_width: 256,
            dec_blocks: 5,
            pos_octaves: 6,
            pooling: PoolingKey(Pooling::Mean),
            signed_values: true,
            cd_points: 2048,
            latent_norm: false,
            shuffle_pairs: false,
            val_every: 200,
            val_samples: 8,
            log_every: 10,
            eval_samples: 16_384,
            iou_samples: 100_000,
            eval_records: 0,
        }
    }

    /// Same structure with sizes and budgets cut to fit one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            profile: Profile::Desk,
            lr: 5e-4,
            lr_schedule: LrSchedule::Cosine,
            batch: 8,
            fm_batch: 64,
            cond_dim: 128,
            dit_depth: 4,
            dit_hidden: 128,
            dit_heads: 4,
            pe_widths: Widths(vec![32, 64, 64]),
            pe_centers: 64,
            pe_width: 128,
            pe_heads: 4,
            pe_layers: 2,
            input_points: 128,
            enc_width: 64,
            dec_width: 128,
            dec_blocks: 4,
            cd_points: 512,
            latent_norm: true,
            eval_samples: 8192,
            iou_samples: 20_000,
            eval_records: 16,
            ..TrainConfig::paper()
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Serialized form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parses a config file body. A leading `profile` line selects the base
    /// values; later keys override them.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(PipelineError::Config { line: i + 1, msg: format!("expected key = value, got {raw:?}") })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let base = pairs
            .iter()
            .find(|(_, k, _)| k == "profile")
            .map(|(line, _, v)| v.parse::<Profile>().map_err(|msg| PipelineError::Config { line: *line, msg }))
            .transpose()?
            .unwrap_or(Profile::Desk);
        let mut cfg = Self::for_profile(base);
        for (line, k, v) in pairs {
            cfg.set(&k, &v).map_err(|msg| PipelineError::Config { line, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        if self.batch == 0 || self.fm_batch == 0 || self.query_count == 0 || self.query_sets == 0 {
            return bad("batch sizes, query_count and query_sets must be positive".into());
        }
        if self.dit_tokens * self.dit_token_width != self.latent_dim {
            return bad(format!("dit_tokens ({}) x dit_token_width ({}) != latent_dim ({})", self.dit_tokens, self.dit_token_width, self.latent_dim));
        }
        if self.patch_size == 0 || self.dit_tokens % self.patch_size != 0 {
            return bad(format!("patch_size {} must divide dit_tokens {}", self.patch_size, self.dit_tokens));
        }
        if self.sampler_steps == 0 {
            return bad("sampler_steps must be at least 1".into());
        }
        if self.resolution < 2 || self.mise_initial == 0 || self.mise_initial > self.resolution {
            return bad(format!("need 1 <= mise_initial ({}) <= resolution ({}), resolution >= 2", self.mise_initial, self.resolution));
        }
        if self.input_points < self.pe_k + 1 {
            return bad(format!("input_points ({}) must exceed pe_k ({})", self.input_points, self.pe_k));
        }
        Ok(())
    }

    /// Rejects settings that parse but have no implementation.
    pub fn require_implemented(&self) -> Result<()> {
        if self.latent_source == LatentSource::Point {
            return Err(PipelineError::NotImplemented("point-cloud latent encoder"));
        }
        if self.decoder_tokens {
            return Err(PipelineError::NotImplemented("per-point decoder tokens"));
        }
        Ok(())
    }

    /// The Chamfer weight actually applied.
    pub fn effective_eta(&self) -> f64 {
        if self.cd_loss { self.eta } else { 0.0 }
    }

    pub fn point_encoder(&self) -> PointEncoderConfig {
        PointEncoderConfig {
            k: self.pe_k,
            edge_widths: self.pe_widths.0.clone(),
            centers: self.pe_centers,
            width: self.pe_width,
            heads: self.pe_heads,
            layers: self.pe_layers,
            cond_dim: self.cond_dim,
            coarse_points: self.coarse_points,
        }
    }

    pub fn autoencoder(&self) -> FuncAeConfig {
        FuncAeConfig {
            latent_dim: self.latent_dim,
            cond_dim: self.cond_dim,
            encoder_width: self.enc_width,
            decoder_width: self.dec_width,
            decoder_blocks: self.dec_blocks,
            pooling: self.pooling.0,
            signed_values: self.signed_values,
            encoder_cond: self.encoder_cond,
            decoder_cond: self.decoder_cond,
            pos_octaves: self.pos_octaves,
        }
    }

    pub fn velocity(&self) -> VelocityConfig {
        VelocityConfig {
            latent_dim: self.latent_dim,
            tokens: self.dit_tokens / self.patch_size,
            token_width: self.dit_token_width * self.patch_size,
            hidden: self.dit_hidden,
            depth: self.dit_depth,
            heads: self.dit_heads,
            cond_dim: self.cond_dim,
            mlp_ratio: self.dit_mlp_ratio,
            freq_dim: self.dit_freq_dim,
        }
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig::new(self.sampler_steps)?)
    }

    /// Keys that fix parameter shapes of the stage-(a) modules.
    pub const ARCH_KEYS_A: &'static [&'static str] = &[
        "latent_dim", "cond_dim", "query_count", "encoder_cond", "decoder_cond", "pe_k", "pe_widths", "pe_centers", "pe_width",
        "pe_heads", "pe_layers", "coarse_points", "input_points", "enc_width", "dec_width", "dec_blocks", "pos_octaves", "pooling",
        "signed_values",
    ];

    /// Names of [`Self::ARCH_KEYS_A`] whose values differ between `self` and `other`.
    pub fn arch_differences(&self, other: &TrainConfig) -> Vec<&'static str> {
        let (a, b) = (self.entries(), other.entries());
        Self::ARCH_KEYS_A
            .iter()
            .copied()
            .filter(|k| a.iter().find(|(n, _)| n == k) != b.iter().find(|(n, _)| n == k))
            .collect()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}
