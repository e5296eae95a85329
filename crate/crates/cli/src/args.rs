use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use echoseg_clpu::ModelKind;

/// Airborne-ultrasound imaging and person segmentation pipeline.
///
/// Set ECHOSEG_LOG (error, warn, info, debug, trace) to control log output.
#[derive(Debug, Parser)]
#[command(name = "echoseg", version)]
pub struct Cli {
    /// Seed for every random draw of the command (noise, initialization,
    /// shuffling, latent samples). Overrides seeds in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Upper bound on worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,

    /// Report errors as a single JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene description into an ECHO-REC multichannel recording.
    Simulate(SimulateArgs),
    /// Turn a recording and a person-free reference into ultrasound images.
    Preprocess(PreprocessArgs),
    /// Build a synthetic multi-subject dataset with masks and a manifest.
    Dataset(DatasetArgs),
    /// Train one model per cross-validation fold.
    Train(TrainArgs),
    /// Score fold checkpoints on their held-out subjects.
    Eval(EvalArgs),
    /// Draw IoU histograms, prediction grids and comparison tables.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON: reflectors, static_background, noise_rms.
    pub scene: PathBuf,

    /// Output recording file.
    #[arg(long)]
    pub out: PathBuf,

    /// Number of consecutive burst intervals to render.
    #[arg(long, default_value_t = 1)]
    pub bursts: usize,

    /// Pipeline config JSON; its `burst` section sets carrier, cycles,
    /// interval and sample rate.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Recording to image (ECHO-REC).
    pub input: PathBuf,

    /// Person-free reference recording of the same room.
    #[arg(long)]
    pub reference: PathBuf,

    /// Output directory for images and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,

    /// Pipeline config JSON (band-pass, range gate, grid, reference mode).
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Also write lossless float32 images and point the manifest at them.
    #[arg(long)]
    pub raw: bool,

    /// Scene JSON the recording was simulated from; adds ground-truth masks
    /// and sample metadata so the manifest can be trained on.
    #[arg(long)]
    pub scene: Option<PathBuf>,

    /// Subject id recorded in the metadata (with --scene).
    #[arg(long, default_value_t = 0)]
    pub subject: usize,

    /// Room id recorded in the metadata (with --scene).
    #[arg(long, default_value_t = 0)]
    pub room: usize,

    /// Motion tag recorded in the metadata (with --scene).
    #[arg(long, default_value = "unknown")]
    pub motion: String,

    /// Side of the square output images; must divide 128.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Experiment config JSON; its `dataset` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Override the number of scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest; repeat to concatenate several.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,

    /// Experiment config JSON; its `train` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Objective: clpu or prob_unet.
    #[arg(long, default_value = "clpu")]
    pub model: ModelKind,

    /// Override the epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Output directory for checkpoints, folds.json and loss.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `echoseg train`.
    #[arg(long)]
    pub checkpoints: PathBuf,

    /// Dataset manifest(s), as passed to `echoseg train`.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,

    /// Experiment config JSON; its `eval` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory for metrics.csv, samples.csv, summary.json and
    /// predicted masks.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Metrics CSV (metrics.csv or samples.csv); draws an IoU histogram with
    /// bins of width 0.01. Per-sample rows are used when present.
    #[arg(long)]
    pub metrics: Option<PathBuf>,

    /// predictions.jsonl from `echoseg eval`; draws image / truth /
    /// prediction rows. Needs --manifest.
    #[arg(long, requires = "manifest")]
    pub predictions: Option<PathBuf>,

    /// Manifest the predictions refer to.
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// summary.json files to compare; repeat for each model.
    #[arg(long)]
    pub summary: Vec<PathBuf>,

    /// Maximum number of rows in the prediction grid.
    #[arg(long, default_value_t = 16)]
    pub max_rows: usize,

    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
