//! Training of model ensembles and the evaluation experiments run on them.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Split, EMPTY_CLASS, IMAGE_PIXELS};
use crate::nn::checkpoint::CheckpointError;
use crate::nn::{
    accumulate_gradients, forward, predict, softmax_cross_entropy, AdamConfig, AdamState, Dims,
    LstmParams, NnError, Scratch,
};
use crate::perturb::{
    apply_contrast_in_place, noisy_step_into, Condition, NoiseKind, PerturbError,
};
use crate::rng::{derive_seed, seeded, NoiseStreams};

pub const ENSEMBLE_SIZE: usize = 5;

const INIT_TAG: u64 = 0x1417;
const SHUFFLE_TAG: u64 = 0x5411;
const MEMBER_TAG: u64 = 0xE45E;
const NOISE_TAG: u64 = 0x4015E;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a {expected:?} dataset, got {found:?}")]
    WrongSplit { expected: Split, found: Split },
    #[error("models have {models} classes but the dataset has {dataset}")]
    ClassCountMismatch { models: usize, dataset: usize },
    #[error("training loss became non-finite in epoch {epoch}, batch {batch} (model seed {seed})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        seed: u64,
    },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("no models to evaluate")]
    NoModels,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seq_len: usize,
    pub include_empty: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub master_seed: u64,
    pub empty_count_train: usize,
    pub empty_count_val: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seq_len: 1,
            include_empty: true,
            epochs: 5,
            batch_size: 128,
            lr: 1e-3,
            master_seed: 20_200_214,
            empty_count_train: 6000,
            empty_count_val: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.seq_len == 0 {
            return bad("sequence length must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        if self.include_empty {
            11
        } else {
            10
        }
    }
}

/// Final parameters of one training run and its per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub seed: u64,
    pub params: LstmParams<f32>,
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam on clean, full-contrast images repeated for every step.
pub fn train_model(
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel, HarnessError> {
    config.validate()?;
    if dataset.split() != Split::Train {
        return Err(HarnessError::WrongSplit {
            expected: Split::Train,
            found: dataset.split(),
        });
    }
    if dataset.num_classes() != config.num_classes() {
        return Err(HarnessError::ClassCountMismatch {
            models: config.num_classes(),
            dataset: dataset.num_classes(),
        });
    }
    let dims = Dims::mnist(dataset.num_classes());
    let mut params = LstmParams::<f32>::init(dims, &mut seeded(derive_seed(&[seed, INIT_TAG])));
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut grads = LstmParams::zeros(dims);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut seeded(derive_seed(&[seed, SHUFFLE_TAG, epoch as u64])));
        let mut epoch_loss = 0.0f64;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            grads.fill(0.0);
            let mut batch_loss = 0.0f64;
            for &idx in batch {
                let example = dataset.example(idx);
                let steps = vec![example.image; config.seq_len];
                let (logits, cache) = forward(&params, &steps)?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, usize::from(example.label))?;
                batch_loss += f64::from(loss);
                accumulate_gradients(&params, &cache, &dlogits, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    seed,
                });
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.update(&mut params, &grads)?;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / dataset.len().max(1) as f64;
        info!(
            "seed {seed:#x} L={} epoch {}/{}: loss {mean:.4} ({:.1}s)",
            config.seq_len,
            epoch + 1,
            config.epochs,
            started.elapsed().as_secs_f64()
        );
        epoch_losses.push(mean);
    }
    if !params.is_finite() {
        return Err(HarnessError::NonFiniteLoss {
            epoch: config.epochs,
            batch: 0,
            seed,
        });
    }
    Ok(TrainedModel {
        seed,
        params,
        epoch_losses,
    })
}

/// Seeds of the ensemble members, derived from the master seed.
pub fn ensemble_seeds(master_seed: u64) -> [u64; ENSEMBLE_SIZE] {
    std::array::from_fn(|i| derive_seed(&[master_seed, MEMBER_TAG, i as u64]))
}

/// Runs `f` on a pool of `jobs` worker threads.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains [`ENSEMBLE_SIZE`] independent models, in parallel on the current pool.
pub fn train_ensemble(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<TrainedModel>, HarnessError> {
    config.validate()?;
    ensemble_seeds(config.master_seed)
        .par_iter()
        .map(|&seed| train_model(dataset, config, seed))
        .collect()
}

/// Accuracy and detection statistics of an ensemble under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub condition: Condition,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Only defined for models with the no-signal class.
    pub mean_detection_rate: Option<f64>,
    pub per_model_accuracy: Vec<f64>,
    pub per_model_detection: Vec<f64>,
}

impl EvalStats {
    pub fn n_models(&self) -> usize {
        self.per_model_accuracy.len()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    correct: u64,
    digits: u64,
    detected: u64,
}

impl Tally {
    fn merge(self, other: Self) -> Self {
        Self {
            correct: self.correct + other.correct,
            digits: self.digits + other.digits,
            detected: self.detected + other.detected,
        }
    }
}

struct Workspace {
    scratch: Scratch<f32>,
    base: Vec<f32>,
    steps: Vec<Vec<f32>>,
}

/// Prediction for one validation example under `cond`.
fn predict_perturbed(
    model: &LstmParams<f32>,
    image: &[f32],
    cond: &Condition,
    streams: &NoiseStreams,
    example: u64,
    ws: &mut Workspace,
) -> Result<usize, HarnessError> {
    ws.base.copy_from_slice(image);
    apply_contrast_in_place(&mut ws.base, cond.t_factor)?;
    if cond.is_noisy() {
        for (step, buf) in ws.steps.iter_mut().enumerate() {
            let mut rng = streams.stream(example, step as u64);
            noisy_step_into(&ws.base, cond, &mut rng, buf)?;
        }
        let seq: Vec<&[f32]> = ws.steps.iter().map(Vec::as_slice).collect();
        Ok(predict(model, &seq, &mut ws.scratch)?)
    } else {
        let seq = vec![ws.base.as_slice(); cond.seq_len];
        Ok(predict(model, &seq, &mut ws.scratch)?)
    }
}

fn check_models(models: &[LstmParams<f32>], valset: &Dataset) -> Result<(), HarnessError> {
    let first = models.first().ok_or(HarnessError::NoModels)?;
    for m in models {
        if m.dims().classes != valset.num_classes() || m.dims() != first.dims() {
            return Err(HarnessError::ClassCountMismatch {
                models: m.dims().classes,
                dataset: valset.num_classes(),
            });
        }
    }
    if valset.split() != Split::Validation {
        return Err(HarnessError::WrongSplit {
            expected: Split::Validation,
            found: valset.split(),
        });
    }
    Ok(())
}

/// Scores every model on every validation example under `cond`.
///
/// Accuracy counts exact label matches over all examples, including the
/// (equally perturbed) no-signal images. The detection rate is the fraction of
/// digit-bearing examples predicted as any digit class. Noise for a given
/// (model, condition, example, step) comes from its own substream of
/// `noise_seed`, so results do not depend on thread count.
pub fn evaluate(
    models: &[LstmParams<f32>],
    valset: &Dataset,
    cond: &Condition,
    noise_seed: u64,
) -> Result<EvalStats, HarnessError> {
    cond.validate()?;
    check_models(models, valset)?;
    let dims = models[0].dims();
    let with_empty = dims.classes > usize::from(EMPTY_CLASS);
    let mut per_model_accuracy = Vec::with_capacity(models.len());
    let mut per_model_detection = Vec::with_capacity(models.len());

    for (m, model) in models.iter().enumerate() {
        let streams =
            NoiseStreams::new(derive_seed(&[noise_seed, NOISE_TAG]), m as u64, cond.key());
        let tally = (0..valset.len())
            .into_par_iter()
            .map_init(
                || Workspace {
                    scratch: Scratch::new(dims),
                    base: vec![0.0; IMAGE_PIXELS],
                    steps: vec![vec![0.0; IMAGE_PIXELS]; cond.seq_len],
                },
                |ws, i| -> Result<Tally, HarnessError> {
                    let example = valset.example(i);
                    let pred =
                        predict_perturbed(model, example.image, cond, &streams, i as u64, ws)?;
                    let is_digit = example.label != EMPTY_CLASS;
                    Ok(Tally {
                        correct: u64::from(pred == usize::from(example.label)),
                        digits: u64::from(is_digit),
                        detected: u64::from(is_digit && pred != usize::from(EMPTY_CLASS)),
                    })
                },
            )
            .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
        per_model_accuracy.push(tally.correct as f64 / valset.len().max(1) as f64);
        per_model_detection.push(tally.detected as f64 / tally.digits.max(1) as f64);
    }

    Ok(EvalStats {
        condition: *cond,
        mean_accuracy: mean(&per_model_accuracy),
        std_accuracy: std_dev(&per_model_accuracy),
        mean_detection_rate: with_empty.then(|| mean(&per_model_detection)),
        per_model_accuracy,
        per_model_detection: if with_empty {
            per_model_detection
        } else {
            Vec::new()
        },
    })
}

/// Results of a grid of conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<EvalStats>,
}

impl SweepTable {
    pub fn find(&self, t_factor: f32, noise_level: f32) -> Option<&EvalStats> {
        self.rows.iter().find(|r| {
            r.condition.t_factor == t_factor && r.condition.effective_level() == noise_level
        })
    }

    /// Rows for one thresholding factor, ordered by noise level.
    pub fn curve(&self, t_factor: f32) -> Vec<&EvalStats> {
        let mut rows: Vec<&EvalStats> = self
            .rows
            .iter()
            .filter(|r| r.condition.t_factor == t_factor)
            .collect();
        rows.sort_by(|a, b| a.condition.noise_level.total_cmp(&b.condition.noise_level));
        rows
    }
}

/// Evaluates the full cross product `t_factors × noise_levels`.
pub fn run_sweep(
    models: &[LstmParams<f32>],
    valset: &Dataset,
    t_factors: &[f32],
    noise_kind: NoiseKind,
    noise_levels: &[f32],
    seq_len: usize,
    noise_seed: u64,
) -> Result<SweepTable, HarnessError> {
    if t_factors.is_empty() || noise_levels.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(t_factors.len() * noise_levels.len());
    for &t in t_factors {
        for &level in noise_levels {
            let started = Instant::now();
            let kind = if level == 0.0 {
                NoiseKind::None
            } else {
                noise_kind
            };
            let mut cond = Condition::new(t, kind, level, seq_len)?;
            let stats = evaluate(models, valset, &cond, noise_seed)?;
            // keep the requested kind in the row so the table stays homogeneous
            cond.noise_kind = noise_kind;
            debug!(
                "{noise_kind} t={t} level={level} L={seq_len}: acc {:.4} ({:.1}s)",
                stats.mean_accuracy,
                started.elapsed().as_secs_f64()
            );
            rows.push(EvalStats {
                condition: cond,
                ..stats
            });
        }
    }
    Ok(SweepTable { rows })
}

/// Same sweep on ten-class models trained without the no-signal class.
pub fn run_ablation(
    models: &[LstmParams<f32>],
    valset: &Dataset,
    t_factors: &[f32],
    noise_kind: NoiseKind,
    noise_levels: &[f32],
    seq_len: usize,
    noise_seed: u64,
) -> Result<SweepTable, HarnessError> {
    let classes = models.first().ok_or(HarnessError::NoModels)?.dims().classes;
    if classes != 10 || valset.num_classes() != 10 {
        return Err(HarnessError::ClassCountMismatch {
            models: classes,
            dataset: valset.num_classes(),
        });
    }
    run_sweep(
        models,
        valset,
        t_factors,
        noise_kind,
        noise_levels,
        seq_len,
        noise_seed,
    )
}

/// Evaluates `template` (with its sequence length replaced) for each length,
/// using an ensemble trained for that length by `ensemble_for`.
pub fn run_seqlen_study<F>(
    valset: &Dataset,
    lengths: &[usize],
    template: &Condition,
    noise_seed: u64,
    mut ensemble_for: F,
) -> Result<SweepTable, HarnessError>
where
    F: FnMut(usize) -> Result<Vec<LstmParams<f32>>, HarnessError>,
{
    if lengths.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let cond = Condition {
            seq_len: len,
            ..*template
        };
        cond.validate()?;
        let models = ensemble_for(len)?;
        rows.push(evaluate(&models, valset, &cond, noise_seed)?);
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, ImageSet};
    use crate::perturb::NoiseKind;

    /// Two-digit toy problem: bright top-half vs bright bottom-half images.
    fn toy(count: usize, include_empty: bool, split: Split, seed: u64) -> Dataset {
        let mut pixels = vec![0.0f32; count * IMAGE_PIXELS];
        let labels: Vec<u8> = (0..count).map(|i| (i % 2) as u8).collect();
        for (i, &l) in labels.iter().enumerate() {
            let img = &mut pixels[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS];
            let range = if l == 0 { 0..392 } else { 392..784 };
            for (k, p) in img[range].iter_mut().enumerate() {
                *p = if (k + i) % 3 == 0 { 1.0 } else { 0.5 };
            }
        }
        let set = ImageSet {
            count,
            rows: 28,
            cols: 28,
            pixels,
        };
        build_dataset(&set, &labels, include_empty, count / 4, split, seed).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rejects_zero_epochs_and_wrong_split() {
        let train = toy(40, true, Split::Train, 1);
        let config = TrainConfig {
            epochs: 0,
            ..quick_config()
        };
        assert!(matches!(
            train_model(&train, &config, 1),
            Err(HarnessError::InvalidConfig(_))
        ));
        let val = toy(40, true, Split::Validation, 1);
        assert!(matches!(
            train_model(&val, &quick_config(), 1),
            Err(HarnessError::WrongSplit { .. })
        ));
        let ten = toy(40, false, Split::Train, 1);
        assert!(matches!(
            train_model(&ten, &quick_config(), 1),
            Err(HarnessError::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let train = toy(200, true, Split::Train, 2);
        let a = train_model(&train, &quick_config(), 7).unwrap();
        let b = train_model(&train, &quick_config(), 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses.len(), 2);
        assert!(a.epoch_losses[1] < a.epoch_losses[0]);
        let val = toy(60, true, Split::Validation, 3);
        let stats = evaluate(&[a.params], &val, &Condition::clean(1), 0).unwrap();
        assert!(stats.mean_accuracy > 0.9, "{stats:?}");
    }

    #[test]
    fn ensemble_seeds_are_distinct() {
        let seeds = ensemble_seeds(42);
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(seeds, ensemble_seeds(42));
    }

    fn random_models(classes: usize, n: usize) -> Vec<LstmParams<f32>> {
        (0..n)
            .map(|i| LstmParams::init(Dims::mnist(classes), &mut seeded(100 + i as u64)))
            .collect()
    }

    #[test]
    fn evaluation_statistics_are_consistent() {
        let val = toy(50, true, Split::Validation, 4);
        let models = random_models(11, 3);
        let cond = Condition::new(0.5, NoiseKind::Uniform, 0.1, 2).unwrap();
        let stats = evaluate(&models, &val, &cond, 9).unwrap();
        assert_eq!(stats.n_models(), 3);
        assert!((stats.mean_accuracy - mean(&stats.per_model_accuracy)).abs() < 1e-15);
        assert!(stats.std_accuracy >= 0.0);
        let det = stats.mean_detection_rate.unwrap();
        assert!((0.0..=1.0).contains(&det));
        assert!(stats
            .per_model_accuracy
            .iter()
            .all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn evaluation_is_independent_of_thread_count() {
        let val = toy(64, true, Split::Validation, 5);
        let models = random_models(11, 2);
        let cond = Condition::new(0.3, NoiseKind::Gaussian, 0.2, 3).unwrap();
        let one = with_jobs(1, || evaluate(&models, &val, &cond, 11).unwrap());
        let four = with_jobs(4, || evaluate(&models, &val, &cond, 11).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn clean_condition_ignores_noise_seed() {
        let val = toy(30, true, Split::Validation, 6);
        let models = random_models(11, 2);
        let a = evaluate(&models, &val, &Condition::clean(1), 1).unwrap();
        let b = evaluate(&models, &val, &Condition::clean(1), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ten_class_models_have_no_detection_rate() {
        let val = toy(30, false, Split::Validation, 7);
        let models = random_models(10, 2);
        let stats = evaluate(&models, &val, &Condition::clean(1), 1).unwrap();
        assert!(stats.mean_detection_rate.is_none());
        let val11 = toy(30, true, Split::Validation, 7);
        assert!(matches!(
            evaluate(&models, &val11, &Condition::clean(1), 1),
            Err(HarnessError::ClassCountMismatch {
                models: 10,
                dataset: 11
            })
        ));
    }

    #[test]
    fn sweep_covers_grid_and_single_cell_matches_evaluate() {
        let val = toy(30, true, Split::Validation, 8);
        let models = random_models(11, 2);
        let table = run_sweep(
            &models,
            &val,
            &[1.0, 0.2],
            NoiseKind::Uniform,
            &[0.0, 0.05, 0.1],
            1,
            3,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 6);
        assert_eq!(table.curve(0.2).len(), 3);
        assert!(table.find(0.2, 0.05).is_some());

        let single = run_sweep(&models, &val, &[1.0], NoiseKind::Uniform, &[0.0], 1, 3).unwrap();
        let baseline = evaluate(&models, &val, &Condition::clean(1), 3).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(
            single.rows[0].per_model_accuracy,
            baseline.per_model_accuracy
        );
        assert!(matches!(
            run_sweep(&models, &val, &[], NoiseKind::Uniform, &[0.0], 1, 3),
            Err(HarnessError::EmptyGrid)
        ));
    }

    #[test]
    fn ablation_requires_ten_classes() {
        let val = toy(30, true, Split::Validation, 9);
        assert!(matches!(
            run_ablation(
                &random_models(11, 1),
                &val,
                &[1.0],
                NoiseKind::Uniform,
                &[0.0],
                1,
                0
            ),
            Err(HarnessError::ClassCountMismatch { .. })
        ));
    }

    #[test]
    fn seqlen_study_single_length_is_one_evaluation() {
        let val = toy(30, true, Split::Validation, 10);
        let models = random_models(11, 2);
        let template = Condition::new(0.15, NoiseKind::Uniform, 0.075, 1).unwrap();
        let mut calls = Vec::new();
        let table = run_seqlen_study(&val, &[1], &template, 5, |len| {
            calls.push(len);
            Ok(models.clone())
        })
        .unwrap();
        assert_eq!(calls, vec![1]);
        assert_eq!(
            table.rows[0],
            evaluate(&models, &val, &template, 5).unwrap()
        );
    }
}
