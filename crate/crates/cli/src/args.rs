use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "inmap", version, about = "Learn vision proxies from unlabeled embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline and write predictions, proxies and trace.
    Infer(PipelineArgs),
    /// Stop after the pseudo labels and write them.
    Pseudo(PipelineArgs),
    /// Fit proxies to a given pseudo-label file.
    LearnProxy(LearnArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic modality-gap model as matrix files.
    Synth(SynthArgs),
    /// Run the numerical checks and print a JSON report.
    VerifyTheory(TheoryArgs),
}

/// Options shared by the pipeline subcommands; each may also come from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Plain-text key=value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub text_proxies: Option<PathBuf>,
    /// Ground-truth labels; enables metrics.json.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Separate unlabeled set to learn proxies on.
    #[arg(long)]
    pub proxy_train_images: Option<PathBuf>,
    #[arg(long)]
    pub tau_t: Option<f64>,
    #[arg(long)]
    pub tau_i: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub pgd_iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub stop_tolerance: Option<f64>,
    /// baseline, inmap25, inmap50, sinkhorn or inmap.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Label matrix written by `pseudo`.
    #[arg(long)]
    pub pseudo_labels: PathBuf,
    /// Role recorded for the supplied labels: raw, refined, thresholded or ground_truth.
    #[arg(long, default_value = "thresholded")]
    pub label_role: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub proxies: PathBuf,
    /// Pseudo labels whose mean entropy is reported.
    #[arg(long)]
    pub pseudo_labels: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.6)]
    pub overlap: f64,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 8.0)]
    pub concentration: f64,
    /// Total embedding width; defaults to twice --dim.
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    /// Use the true proxies as the in-span text component.
    #[arg(long)]
    pub full_overlap: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub prop1_samples: Option<usize>,
    #[arg(long)]
    pub thm1_seeds: Option<usize>,
    #[arg(long)]
    pub thm2_models: Option<usize>,
    #[arg(long)]
    pub thm2_samples: Option<usize>,
    /// Skip the stationarity and label-noise checks, which fit proxies.
    #[arg(long)]
    pub skip_fitting: bool,
    /// Also write the report to this directory as theory.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
