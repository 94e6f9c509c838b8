//! Command implementations behind the `diveoff` binary.
//!
//! Every command is a function of its flags, optional config file, input
//! bytes and seed. Each writes its outputs plus a JSON run manifest and
//! returns the manifest.

pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use diveoff_core::diveoff::{train, train_baseline, Baseline, MetricsRecord, TrainConfig, TrainOutput};
use diveoff_core::env::{
    dataset_read, dataset_write, evenly_spaced_styles, generate_dataset, normalize_states, EnvConfig, Variant,
};
use diveoff_core::eval::{dataset_entropy, evaluate, few_shot_adapt, Bandwidth, EvalOptions};
use diveoff_core::models::{checkpoint_read, checkpoint_write, Checkpoint};

pub use manifest::{file_sha256, manifest_path, FileHash, RunManifest};

/// Runtime failure; the binary exits with status 1.
pub const EXIT_FAILURE: i32 = 1;
/// Bad flags or config; the binary exits with status 2.
pub const EXIT_USAGE: i32 = 2;

/// A configuration problem detected after flag parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn to_json(v: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn finish(mut m: RunManifest, started: Instant, path: &Path) -> Result<RunManifest> {
    m.duration_secs = started.elapsed().as_secs_f64();
    m.write(path)?;
    Ok(m)
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of arc styles, spread evenly over the offset range.
    #[arg(long, default_value_t = 4)]
    pub styles: usize,
    #[arg(long, default_value_t = 250)]
    pub episodes_per_style: usize,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<RunManifest> {
    let started = Instant::now();
    if args.styles == 0 {
        return Err(usage("--styles must be at least 1"));
    }
    let env = EnvConfig::default();
    let ds = generate_dataset(&env, &evenly_spaced_styles(args.styles), args.episodes_per_style, args.seed)?;
    let ds = normalize_states(ds)?;
    dataset_write(&ds, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} transitions to {}", ds.len(), args.out.display());
    let mut m = RunManifest::new("gen-data", to_json(args)?, args.seed);
    m.outputs.push(FileHash::of(&args.out)?);
    finish(m, started, &manifest_path(&args.out))
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Diveoff,
    AwaclVae,
    AwaclVaeDiayn,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Diveoff => "diveoff",
            Algo::AwaclVae => "awacl-vae",
            Algo::AwaclVaeDiayn => "awacl-vae-diayn",
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Algo::Diveoff)]
    pub algo: Algo,
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; receives `ckpt.bin`, `metrics.jsonl` and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `total_steps` from the config.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with any subset of the training config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Reads a TOML training config, then applies flag overrides.
pub fn load_train_config(path: Option<&Path>, steps: Option<u64>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = steps {
        cfg.total_steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub const CKPT_FILE: &str = "ckpt.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let cfg = load_train_config(args.config.as_deref(), args.steps, args.seed)?;
    let ds = dataset_read(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let data_hash = FileHash::of(&args.data)?;
    fs::create_dir_all(&args.out)?;

    let mut metrics = String::new();
    let mut sink = |m: &MetricsRecord| {
        log::info!("step {} critic {:.4e}", m.step, m.critic_loss);
        metrics.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        metrics.push('\n');
    };
    let out: TrainOutput = match args.algo {
        Algo::Diveoff => train(&ds, &cfg, &mut sink)?,
        Algo::AwaclVae => train_baseline(&ds, &cfg, Baseline::AwaclVae, &mut sink)?,
        Algo::AwaclVaeDiayn => train_baseline(&ds, &cfg, Baseline::AwaclVaeDiayn, &mut sink)?,
    };
    let ckpt_path = args.out.join(CKPT_FILE);
    let metrics_path = args.out.join(METRICS_FILE);
    let ckpt = Checkpoint::new(
        out.models,
        args.algo.name(),
        ds.norm.clone(),
        ds.meta.env.clone(),
        cfg.hash(),
        data_hash.sha256.clone(),
        out.step,
    );
    checkpoint_write(&ckpt, &ckpt_path)?;
    manifest::write_atomic(&metrics_path, metrics.as_bytes())?;

    let mut m = RunManifest::new(
        "train",
        serde_json::json!({ "algo": args.algo, "train": cfg }),
        cfg.seed,
    );
    m.inputs.push(data_hash);
    m.outputs.push(FileHash::of(&ckpt_path)?);
    m.outputs.push(FileHash::of(&metrics_path)?);
    let m = finish(m, started, &args.out.join(MANIFEST_FILE))?;
    if let Some(err) = out.divergence {
        bail!("{err}; kept the checkpoint from step {}", out.step);
    }
    Ok(m)
}

fn parse_bandwidth(s: &str) -> std::result::Result<Bandwidth, String> {
    if s == "median" {
        return Ok(Bandwidth::Median);
    }
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 => Ok(Bandwidth::Fixed(h)),
        _ => Err(format!("expected `median` or a positive number, got `{s}`")),
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    None,
    WallUpper,
    WallLower,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::None => Variant::None,
            VariantArg::WallUpper => Variant::WallUpper,
            VariantArg::WallLower => Variant::WallLower,
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Latent grid points per axis.
    #[arg(long, default_value_t = 3)]
    pub z_grid: usize,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kernel bandwidth for the diversity score: `median` or a number.
    #[arg(long, default_value = "median", value_parser = parse_bandwidth)]
    #[serde(skip)]
    pub bandwidth: Bandwidth,
    #[arg(long, value_enum, default_value_t = VariantArg::None)]
    pub variant: VariantArg,
}

fn read_ckpt(path: &Path) -> Result<Checkpoint> {
    checkpoint_read(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let started = Instant::now();
    if args.episodes == 0 || args.z_grid == 0 {
        return Err(usage("--episodes and --z-grid must be at least 1"));
    }
    let ckpt = read_ckpt(&args.ckpt)?;
    let env = ckpt.header.env.clone().with_variant(args.variant.into());
    let opts = EvalOptions {
        episodes: args.episodes,
        grid: args.z_grid,
        bandwidth: args.bandwidth,
        seed: args.seed,
    };
    let report = evaluate(&ckpt.models, &ckpt.header.norm, &env, &opts)?;
    manifest::write_atomic(&args.report, &serde_json::to_vec_pretty(&report)?)?;
    println!("{}", serde_json::to_string(&report.summary)?);
    let mut config = to_json(args)?;
    config["bandwidth"] = to_json(&args.bandwidth)?;
    let mut m = RunManifest::new("eval", config, args.seed);
    m.inputs.push(FileHash::of(&args.ckpt)?);
    m.outputs.push(FileHash::of(&args.report)?);
    finish(m, started, &manifest_path(&args.report))
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::WallUpper)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 25)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<RunManifest> {
    let started = Instant::now();
    if args.budget == 0 {
        return Err(usage("--budget must be at least 1"));
    }
    let ckpt = read_ckpt(&args.ckpt)?;
    let env = ckpt.header.env.clone().with_variant(args.variant.into());
    let result = few_shot_adapt(&ckpt.models, &ckpt.header.norm, &env, args.budget, args.seed)?;
    manifest::write_atomic(&args.report, &serde_json::to_vec_pretty(&result)?)?;
    println!(
        "{}",
        serde_json::json!({
            "z_max": result.z_max,
            "probe_mean": result.probe_mean,
            "adapted_mean": result.adapted_mean,
            "adapted_mode": result.adapted_mode,
        })
    );
    let mut m = RunManifest::new("adapt", to_json(args)?, args.seed);
    m.inputs.push(FileHash::of(&args.ckpt)?);
    m.outputs.push(FileHash::of(&args.report)?);
    finish(m, started, &manifest_path(&args.report))
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct EntropyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_components: usize,
    #[arg(long, default_value_t = 5)]
    pub batches: usize,
    #[arg(long, default_value_t = 5000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
}

pub fn cmd_dataset_entropy(args: &EntropyArgs) -> Result<RunManifest> {
    let started = Instant::now();
    if args.max_components == 0 || args.batches == 0 || args.batch_size == 0 {
        return Err(usage("--max-components, --batches and --batch-size must be at least 1"));
    }
    let ds = dataset_read(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let report = dataset_entropy(&ds.raw_states(), args.batches, args.batch_size, args.max_components, args.seed)?;
    manifest::write_atomic(&args.report, &serde_json::to_vec_pretty(&report)?)?;
    println!("entropy bound {:.4} +- {:.4} nats", report.mean, report.std);
    let mut m = RunManifest::new("dataset-entropy", to_json(args)?, args.seed);
    m.inputs.push(FileHash::of(&args.data)?);
    m.outputs.push(FileHash::of(&args.report)?);
    finish(m, started, &manifest_path(&args.report))
}
