//! Finite-difference verification of the hand-derived gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::softmax_cross_entropy;
use super::lstm::{accumulate_gradients, forward};
use super::params::{Dims, LstmParams, Real};
use super::NnError;

/// One training sequence with its target class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub inputs: Vec<Vec<T>>,
    pub label: usize,
}

impl<T> Sample<T> {
    pub fn steps(&self) -> Vec<&[T]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }
}

/// Mean cross-entropy over `batch`.
pub fn batch_loss<T: Real>(params: &LstmParams<T>, batch: &[Sample<T>]) -> Result<T, NnError> {
    let mut total = T::zero();
    for sample in batch {
        let (logits, _) = forward(params, &sample.steps())?;
        total += softmax_cross_entropy(&logits, sample.label)?.0;
    }
    Ok(total / T::of(batch.len().max(1) as f64))
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn batch_loss_and_grad<T: Real>(
    params: &LstmParams<T>,
    batch: &[Sample<T>],
) -> Result<(T, LstmParams<T>), NnError> {
    let mut grads = LstmParams::zeros(params.dims());
    let mut total = T::zero();
    for sample in batch {
        let (logits, cache) = forward(params, &sample.steps())?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, sample.label)?;
        total += loss;
        accumulate_gradients(params, &cache, &dlogits, &mut grads)?;
    }
    let scale = T::one() / T::of(batch.len().max(1) as f64);
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Denominator floor of the relative error. Central differences of an O(1)
/// loss carry ~1e-11 of rounding error, so gradients below this magnitude are
/// effectively compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between analytic and central-difference
/// gradients, `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`, over every parameter.
pub fn gradient_check(
    params: &LstmParams<f64>,
    batch: &[Sample<f64>],
    epsilon: f64,
) -> Result<f64, NnError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(NnError::DegenerateStep(epsilon));
    }
    let (_, analytic) = batch_loss_and_grad(params, batch)?;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.as_slice().iter().enumerate() {
        let original = probe.as_slice()[k];
        probe.as_mut_slice()[k] = original + epsilon;
        let plus = batch_loss(&probe, batch)?;
        probe.as_mut_slice()[k] = original - epsilon;
        let minus = batch_loss(&probe, batch)?;
        probe.as_mut_slice()[k] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Random small model and batch for gradient checking: weights in
/// `[-0.5, 0.5)` with gate biases shifted by +0.3 (away from the ReLU kink),
/// inputs in `[0, 1)`, one input repeated for every step.
pub fn random_problem(
    dims: Dims,
    steps: usize,
    batch: usize,
    seed: u64,
) -> (LstmParams<f64>, Vec<Sample<f64>>) {
    random_problem_with(dims, steps, batch, true, seed)
}

fn random_problem_with(
    dims: Dims,
    steps: usize,
    batch: usize,
    repeat_input: bool,
    seed: u64,
) -> (LstmParams<f64>, Vec<Sample<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LstmParams::zeros(dims);
    for w in params.as_mut_slice() {
        *w = rng.random_range(-0.5..0.5);
    }
    params.view_mut().b_gates.iter_mut().for_each(|b| *b += 0.3);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dims.input)
            .map(|_| rng.random_range(0.0..1.0))
            .collect()
    };
    let samples = (0..batch)
        .map(|s| {
            let first = draw(&mut rng);
            let mut inputs = vec![first];
            for _ in 1..steps {
                let next = if repeat_input {
                    inputs[0].clone()
                } else {
                    draw(&mut rng)
                };
                inputs.push(next);
            }
            Sample {
                inputs,
                label: s % dims.classes,
            }
        })
        .collect();
    (params, samples)
}
