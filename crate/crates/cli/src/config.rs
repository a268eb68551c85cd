//! Run configuration: a flat TOML key/value file, overridden by flags.
//!
//! Recognized keys (all optional):
//!
//! ```toml
//! data_dir = "data/mnist"
//! out_dir = "runs"
//! model_dir = "runs/models"
//! seed = 20200214
//! epochs = 5
//! batch_size = 128
//! lr = 0.001
//! empty_train = 6000
//! empty_val = 1000
//! jobs = 4
//! seq_len = 1
//! t_factors = [1.0, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05]
//! noise_levels = [0.0, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3]
//! seq_lengths = [1, 2, 4, 8]
//! seqlen_t_factor = 0.15
//! seqlen_noise_level = 0.075
//! examples_count = 10
//! examples_t_factor = 0.2
//! examples_noise_level = 0.05
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stochres_core::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub empty_train: Option<usize>,
    pub empty_val: Option<usize>,
    pub jobs: Option<usize>,
    pub seq_len: Option<usize>,
    pub t_factors: Option<Vec<f32>>,
    pub noise_levels: Option<Vec<f32>>,
    pub seq_lengths: Option<Vec<usize>>,
    pub seqlen_t_factor: Option<f32>,
    pub seqlen_noise_level: Option<f32>,
    pub examples_count: Option<usize>,
    pub examples_t_factor: Option<f32>,
    pub examples_noise_level: Option<f32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Settings shared by every subcommand after merging file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub empty_train: usize,
    pub empty_val: usize,
    pub jobs: usize,
    pub retrain: bool,
}

impl Settings {
    pub fn train_config(&self, seq_len: usize, include_empty: bool) -> TrainConfig {
        TrainConfig {
            seq_len,
            include_empty,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            master_seed: self.seed,
            empty_count_train: self.empty_train,
            empty_count_val: self.empty_val,
        }
    }
}
