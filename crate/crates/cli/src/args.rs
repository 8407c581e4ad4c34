use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "stasunet", version, about = "Low-light video enhancement on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset of PNG frames.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Restore a directory of frames with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// PSNR/SSIM of predicted frames against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of sampled parameters of a fresh model.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate on in-memory synthetic data.
    Experiment(ExperimentArgs),
}

/// Model configuration sources, applied in order: preset, file, `--set`.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Base preset (toy or paper).
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat `key=value` file of model config keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long)]
    pub frames: usize,
    /// Square frame side in pixels.
    #[arg(long)]
    pub size: usize,
    /// Low-light levels in percent; the 100 level is always written.
    #[arg(long, value_delimiter = ',', default_value = "20,10")]
    pub levels: Vec<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// translate, rotate or mixed.
    #[arg(long, default_value = "mixed")]
    pub motion: String,
    /// Scenes listed in test.txt; default is a fifth of them.
    #[arg(long)]
    pub test_scenes: Option<usize>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Input light levels in percent; ground truth is always level 100.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub levels: Vec<u32>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Total optimiser steps (a resumed run continues up to this count).
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Checkpoint interval in steps.
    #[arg(long, default_value_t = 100)]
    pub ckpt_every: u64,
    /// Continue from `--ckpt` if it exists.
    #[arg(long)]
    pub resume: bool,
    /// Where loss.csv and train_config.txt go; defaults to the checkpoint's
    /// directory.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Match each input frame to the pooled histogram of these frames
    /// before inference.
    #[arg(long, value_name = "REF_DIR")]
    pub histmatch: Option<PathBuf>,
    /// Pool at most this many evenly spaced reference frames.
    #[arg(long)]
    pub ref_frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the per-frame CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Frame side; defaults to the config's crop size.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 2e-2)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// One scene, train then compare against a contrast-stretched input.
    Overfit,
    /// 1-frame versus multi-frame models on the same data.
    FrameCount,
    /// Train at one light level, test at another with and without
    /// histogram matching.
    Histmatch,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub train_scenes: Option<usize>,
    #[arg(long)]
    pub test_scenes: Option<usize>,
    /// Frames per synthetic clip.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Input frame counts compared by `frame-count`.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub frame_counts: Vec<usize>,
}
