//! Stochastic-resonance experiments on an LSTM digit classifier.
//!
//! A small LSTM is trained on clean MNIST digits plus a black "no signal"
//! class. At test time the stimulus contrast is reduced until the model stops
//! seeing it, and additive noise is swept to measure how much classification
//! it recovers.

pub mod data;
pub mod harness;
pub mod nn;
pub mod perturb;
pub mod report;
pub mod rng;
pub mod store;

pub use data::{
    build_dataset, parse_idx, Dataset, ImageSet, LabeledExample, MnistFiles, Split, EMPTY_CLASS,
};
pub use harness::{
    evaluate, run_ablation, run_seqlen_study, run_sweep, train_ensemble, train_model, EvalStats,
    HarnessError, SweepTable, TrainConfig, TrainedModel, ENSEMBLE_SIZE,
};
pub use nn::{Dims, LstmParams};
pub use perturb::{Condition, NoiseKind};
pub use store::EnsembleStore;

/// Default thresholding factors swept.
pub const DEFAULT_T_FACTORS: [f32; 7] = [1.0, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05];
/// Default noise levels, shared by uniform and Gaussian sweeps.
pub const DEFAULT_NOISE_LEVELS: [f32; 10] =
    [0.0, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3];
/// Default sequence lengths for the length study.
pub const DEFAULT_SEQ_LENGTHS: [usize; 4] = [1, 2, 4, 8];
