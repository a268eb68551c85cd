//! On-disk cache of trained ensembles, keyed by the training configuration.
//!
//! ```text
//! <root>/<tag>/model_0.ckpt … model_4.ckpt
//! <root>/<tag>/train_log.csv     model,seed,epoch,loss
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::data::Dataset;
use crate::harness::{train_ensemble, HarnessError, TrainConfig, TrainedModel, ENSEMBLE_SIZE};
use crate::nn::checkpoint;
use crate::nn::LstmParams;

#[derive(Debug, Clone)]
pub struct EnsembleStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl EnsembleStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Directory name encoding every setting that affects the trained weights.
    pub fn tag(config: &TrainConfig) -> String {
        let empties = if config.include_empty {
            config.empty_count_train
        } else {
            0
        };
        format!(
            "k{}-L{}-e{}-b{}-lr{:e}-empty{}-seed{}",
            config.num_classes(),
            config.seq_len,
            config.epochs,
            config.batch_size,
            config.lr,
            empties,
            config.master_seed
        )
    }

    pub fn dir_for(&self, config: &TrainConfig) -> PathBuf {
        self.root.join(Self::tag(config))
    }

    fn model_path(dir: &Path, i: usize) -> PathBuf {
        dir.join(format!("model_{i}.ckpt"))
    }

    /// Cached ensemble, if every member checkpoint is present.
    pub fn load(&self, config: &TrainConfig) -> Result<Option<Vec<LstmParams<f32>>>, HarnessError> {
        let dir = self.dir_for(config);
        let paths: Vec<PathBuf> = (0..ENSEMBLE_SIZE)
            .map(|i| Self::model_path(&dir, i))
            .collect();
        if !paths.iter().all(|p| p.is_file()) {
            return Ok(None);
        }
        let models = paths
            .iter()
            .map(|p| checkpoint::load(p))
            .collect::<Result<Vec<_>, _>>()?;
        if models
            .iter()
            .any(|m| m.dims().classes != config.num_classes())
        {
            return Ok(None);
        }
        Ok(Some(models))
    }

    pub fn save(
        &self,
        config: &TrainConfig,
        models: &[TrainedModel],
    ) -> Result<PathBuf, HarnessError> {
        let dir = self.dir_for(config);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut log = String::from("model,seed,epoch,loss\n");
        for (i, model) in models.iter().enumerate() {
            checkpoint::save(&model.params, &Self::model_path(&dir, i))?;
            for (epoch, loss) in model.epoch_losses.iter().enumerate() {
                let _ = writeln!(log, "{i},{},{},{loss:.6}", model.seed, epoch + 1);
            }
        }
        let log_path = dir.join("train_log.csv");
        fs::write(&log_path, log).map_err(io_err(&log_path))?;
        Ok(dir)
    }

    /// Loads the cached ensemble for `config`, or trains and caches one.
    /// `train_set` is only called when training is needed.
    pub fn load_or_train<F>(
        &self,
        config: &TrainConfig,
        retrain: bool,
        train_set: F,
    ) -> Result<Vec<LstmParams<f32>>, HarnessError>
    where
        F: FnOnce() -> Result<Dataset, HarnessError>,
    {
        if !retrain {
            if let Some(models) = self.load(config)? {
                info!("using cached ensemble {}", self.dir_for(config).display());
                return Ok(models);
            }
        }
        let dataset = train_set()?;
        info!("training ensemble {}", Self::tag(config));
        let trained = train_ensemble(&dataset, config)?;
        self.save(config, &trained)?;
        Ok(trained.into_iter().map(|m| m.params).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_distinguishes_configs() {
        let base = TrainConfig::default();
        let other = TrainConfig {
            include_empty: false,
            ..base.clone()
        };
        let longer = TrainConfig {
            seq_len: 4,
            ..base.clone()
        };
        assert_ne!(EnsembleStore::tag(&base), EnsembleStore::tag(&other));
        assert_ne!(EnsembleStore::tag(&base), EnsembleStore::tag(&longer));
        assert!(EnsembleStore::tag(&base).starts_with("k11-L1-e5-b128"));
    }

    #[test]
    fn missing_ensemble_loads_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let store = EnsembleStore::new(dir.path());
        assert!(store.load(&TrainConfig::default()).unwrap().is_none());
    }
}
