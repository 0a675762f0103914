use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use occdiff_core::evalkit::EvalReport;
use occdiff_core::geometry::obj::{read_point_cloud, write_obj};
use occdiff_core::synthbuild::format::read_points;
use occdiff_core::synthbuild::{build_dataset, ingest_external, BuildConfig, Dataset, IngestOptions, Split};
use occdiff_pipeline::device::device_from_env;
use occdiff_pipeline::eval::{eval_items, evaluate_source, Source};
use occdiff_pipeline::infer::z0_seed;
use occdiff_pipeline::{
    default_grid, infer_mesh, run_ablation_matrix, train_stage_a, train_stage_b, Checkpoint, Model, Stage, TrainConfig, TrainData,
};

/// Shape completion of partial building scans in occupancy-function space.
#[derive(Parser)]
#[command(name = "occdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural building dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Import external mesh/cloud pairs matched by file stem.
    Ingest {
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        clouds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the point encoder and function autoencoder.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the flow-matching model on top of a frozen autoencoder.
    TrainFm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage_a: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete one partial cloud into a mesh (normalized coordinates).
    Infer {
        #[arg(long)]
        stage_a: PathBuf,
        #[arg(long)]
        stage_b: PathBuf,
        /// Cloud file: `.bin` dataset format, `.obj` vertices, or text xyz.
        #[arg(long, conflicts_with_all = ["data", "id"])]
        cloud: Option<PathBuf>,
        /// Dataset root, used with `--id`.
        #[arg(long, requires = "id")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        id: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        resolution: Option<usize>,
        /// Output OBJ path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model against reference meshes.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage_a: PathBuf,
        #[arg(long)]
        stage_b: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = SourceArg::Both)]
        source: SourceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        resolution: Option<usize>,
        /// Output directory for meshes, metrics and the table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the ablation grid over CD loss and encoder conditioning.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training steps of the stage being run.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    no_cd_loss: bool,
    #[arg(long)]
    no_encoder_cond: bool,
    #[arg(long)]
    no_decoder_cond: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SourceArg {
    Latent,
    Diffusion,
    Both,
}

impl Common {
    fn config(&self, stage: Stage) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::desk(),
        };
        cfg.stage = stage;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.steps {
            match stage {
                Stage::Autoencoder => cfg.steps_a = n,
                Stage::Diffusion => cfg.steps_b = n,
            }
        }
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        cfg.cd_loss &= !self.no_cd_loss;
        cfg.encoder_cond &= !self.no_encoder_cond;
        cfg.decoder_cond &= !self.no_decoder_cond;
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_data(root: &Path, split: SplitArg, cfg: &TrainConfig) -> Result<(Dataset, TrainData)> {
    let ds = Dataset::open(root)?;
    let data = match split {
        SplitArg::All => TrainData::load(&ds, &ds.records.iter().collect::<Vec<_>>(), cfg)?,
        SplitArg::Train => TrainData::load_split(&ds, Split::Train, cfg)?,
        SplitArg::Val => TrainData::load_split(&ds, Split::Val, cfg)?,
        SplitArg::Test => TrainData::load_split(&ds, Split::Test, cfg)?,
    };
    Ok((ds, data))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_cloud(path: &Path) -> Result<Vec<occdiff_core::Point3>> {
    if path.extension().is_some_and(|e| e == "bin") {
        Ok(read_points(path)?)
    } else {
        Ok(read_point_cloud(path)?)
    }
}

fn report(out: &Path, source: Source, rep: &EvalReport) -> Result<()> {
    write_text(&out.join(format!("metrics_{source}.jsonl")), &rep.to_jsonl()?)?;
    let table = rep.table();
    write_text(&out.join(format!("table_{source}.txt")), &table)?;
    println!("[{source}]\n{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, count, seed } => {
            let recs = build_dataset(&BuildConfig { count, seed, ..BuildConfig::default() }, &out)?;
            println!("wrote {} records to {}", recs.len(), out.display());
        }
        Command::Ingest { meshes, clouds, out, seed } => {
            let s = ingest_external(&meshes, &clouds, &out, &IngestOptions { seed, ..IngestOptions::default() })?;
            println!(
                "ingested {} pairs; {} meshes without clouds, {} unmatched clouds, {} open meshes skipped",
                s.records.len(),
                s.unmatched_meshes.len(),
                s.unmatched_clouds.len(),
                s.skipped_open.len()
            );
        }
        Command::TrainAe { common, data, out } => {
            let cfg = common.config(Stage::Autoencoder)?;
            let (_, data) = load_data(&data, common.split, &cfg)?;
            let device = device_from_env()?;
            let run = train_stage_a(&data, &cfg, &device)?;
            run.checkpoint.save(&out)?;
            let last = run.steps.last().context("no training steps")?;
            println!("saved {} (step {}, occ {:.4}, accuracy {:.4})", out.display(), run.checkpoint.step, last.occ, last.accuracy);
        }
        Command::TrainFm { common, data, stage_a, out } => {
            let cfg = common.config(Stage::Diffusion)?;
            let (_, data) = load_data(&data, common.split, &cfg)?;
            let device = device_from_env()?;
            let a = Checkpoint::load(&stage_a)?;
            let run = train_stage_b(&data, &a, &cfg, &device)?;
            run.checkpoint.save(&out)?;
            let last = run.steps.last().context("no training steps")?;
            println!("saved {} (step {}, fm loss {:.4})", out.display(), run.checkpoint.step, last.loss);
        }
        Command::Infer { stage_a, stage_b, cloud, data, id, seed, resolution, out } => {
            let device = device_from_env()?;
            let model = Model::load(&Checkpoint::load(&stage_a)?, Some(&Checkpoint::load(&stage_b)?), &device)?;
            let points = match (cloud, data, id) {
                (Some(p), _, _) => read_cloud(&p)?,
                (None, Some(root), Some(id)) => {
                    let ds = Dataset::open(&root)?;
                    let rec = ds.get(&id).with_context(|| format!("no record {id:?}"))?;
                    ds.load_cloud(rec, 0)?.points
                }
                _ => bail!("give --cloud or --data with --id"),
            };
            let res = resolution.unwrap_or(model.cfg.resolution);
            let mesh = infer_mesh(&points, &model, z0_seed(seed, 0), res)?;
            write_obj(&mesh, &out)?;
            println!("wrote {} ({} vertices, {} faces)", out.display(), mesh.vertices().len(), mesh.faces().len());
        }
        Command::Eval { data, stage_a, stage_b, split, source, seed, resolution, out } => {
            let device = device_from_env()?;
            let b = stage_b.as_deref().map(Checkpoint::load).transpose()?;
            let model = Model::load(&Checkpoint::load(&stage_a)?, b.as_ref(), &device)?;
            let (_, data) = load_data(&data, split, &model.cfg)?;
            let items = eval_items(&data, model.cfg.eval_records);
            let res = resolution.unwrap_or(model.cfg.resolution);
            let mut sources = vec![];
            if source != SourceArg::Diffusion {
                sources.push(Source::Latent);
            }
            if source != SourceArg::Latent {
                if b.is_none() {
                    bail!("diffusion-source evaluation needs --stage-b");
                }
                sources.push(Source::Diffusion);
            }
            for s in sources {
                let dir = out.join(format!("meshes_{s}"));
                let rep = evaluate_source(&model, &data, &items, s, res, seed, Some(&dir))?;
                report(&out, s, &rep)?;
            }
        }
        Command::Ablate { common, data, out } => {
            let cfg = common.config(Stage::Autoencoder)?;
            let (_, data) = load_data(&data, common.split, &cfg)?;
            let device = device_from_env()?;
            let rep = run_ablation_matrix(&data, &cfg, &default_grid(), &device)?;
            write_text(&out.join("ablation.jsonl"), &rep.to_jsonl()?)?;
            let table = rep.table();
            write_text(&out.join("ablation.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_max_level(tracing::Level::INFO).init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
