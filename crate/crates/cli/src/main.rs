//! `stochres`: train LSTM ensembles and run the contrast/noise sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stochres_core::NoiseKind;

#[derive(Debug, Parser)]
#[command(
    name = "stochres",
    version,
    about = "Noise-aided recovery of low-contrast digits with an LSTM ensemble"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or load from cache) an ensemble and report clean accuracy.
    Train(TrainArgs),
    /// Contrast x noise-level sweep on the 11-class ensemble.
    Sweep(SweepArgs),
    /// Same sweep on a 10-class ensemble trained without blank images.
    Ablation(SweepArgs),
    /// One condition evaluated for several sequence lengths.
    Seqlen(SeqlenArgs),
    /// Write original / low-contrast / noised image triplets as PGM files.
    Examples(ExamplesArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files (raw or .gz).
    #[arg(long, value_name = "DIR", env = "STOCHRES_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Output directory [default: runs]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Trained-model cache [default: <out>/models]
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Master seed [default: 20200214]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs [default: 5]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Blank images added to the training set [default: 6000]
    #[arg(long)]
    pub empty_train: Option<usize>,
    /// Blank images added to the validation set [default: 1000]
    #[arg(long)]
    pub empty_val: Option<usize>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Ignore cached models and train again.
    #[arg(long)]
    pub retrain: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Uniform,
    Gaussian,
}

impl From<NoiseArg> for NoiseKind {
    fn from(arg: NoiseArg) -> Self {
        match arg {
            NoiseArg::Uniform => NoiseKind::Uniform,
            NoiseArg::Gaussian => NoiseKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Steps per input sequence [default: 1]
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Train the 10-class variant without blank images.
    #[arg(long)]
    pub no_empty: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Noise distribution.
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: NoiseArg,
    /// Comma-separated thresholding factors.
    #[arg(long, value_delimiter = ',')]
    pub t_factors: Option<Vec<f32>>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    pub noise_levels: Option<Vec<f32>>,
    /// Steps per input sequence [default: 1]
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SeqlenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Noise distribution.
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: NoiseArg,
    /// Comma-separated sequence lengths [default: 1,2,4,8]
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    /// Thresholding factor [default: 0.15]
    #[arg(long)]
    pub t_factor: Option<f32>,
    /// Noise level [default: 0.075]
    #[arg(long)]
    pub noise_level: Option<f32>,
}

#[derive(Debug, Clone, Args)]
pub struct ExamplesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Noise distribution.
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: NoiseArg,
    /// Number of triplets [default: 10]
    #[arg(long)]
    pub count: Option<usize>,
    /// Thresholding factor [default: 0.2]
    #[arg(long)]
    pub t_factor: Option<f32>,
    /// Noise level [default: 0.05]
    #[arg(long)]
    pub noise_level: Option<f32>,
    /// Ensemble member used for predictions.
    #[arg(long, default_value_t = 0)]
    pub model: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Seed for the random problems.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
