#![allow(dead_code)]

use std::path::Path;

use occdiff_core::synthbuild::{build_dataset, BuildConfig, Dataset, DatasetRecord};
use occdiff_pipeline::{TrainConfig, TrainData};

/// A model small enough to train for a few steps in well under a second.
pub const TINY: &str = "\
profile = desk
seed = 3
lr = 0.005
batch = 2
fm_batch = 4
latent_dim = 16
cond_dim = 16
dit_tokens = 4
dit_token_width = 4
dit_depth = 1
dit_hidden = 16
dit_heads = 2
dit_freq_dim = 16
sampler_steps = 4
resolution = 16
mise_initial = 4
steps_a = 30
steps_b = 10
pe_k = 4
pe_widths = 8,8
pe_centers = 8
pe_width = 16
pe_heads = 2
pe_layers = 1
coarse_points = 16
input_points = 32
enc_width = 16
dec_width = 16
dec_blocks = 2
pos_octaves = 2
cd_points = 64
val_every = 10
val_samples = 2
eval_samples = 512
iou_samples = 1000
eval_records = 2
";

pub fn tiny() -> TrainConfig {
    TrainConfig::parse(TINY).unwrap()
}

pub fn dataset(dir: &Path, count: usize) -> Dataset {
    build_dataset(&BuildConfig { count, seed: 11, ..Default::default() }, dir).unwrap();
    Dataset::open(dir).unwrap()
}

pub fn train_data(ds: &Dataset, cfg: &TrainConfig) -> TrainData {
    let recs: Vec<&DatasetRecord> = ds.records.iter().collect();
    TrainData::load(ds, &recs, cfg).unwrap()
}
