//! Hand-differentiated LSTM classifier: cell, readout, loss, optimizer and
//! gradient verification.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod params;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    batch_loss, batch_loss_and_grad, gradient_check, random_problem, Sample, RELATIVE_FLOOR,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use lstm::{
    accumulate_gradients, argmax, backward, forward, infer, lstm_step, predict, ForwardCache,
    Scratch, StepCache,
};
pub use params::{Dims, Gate, LstmParams, Real, HIDDEN_UNITS};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("sequence must have at least one step")]
    EmptySequence,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("forward cache does not match the parameters")]
    CacheMismatch,
    #[error("finite-difference step must be positive and finite, got {0}")]
    DegenerateStep(f64),
}
