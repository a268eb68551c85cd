use super::params::Real;
use super::NnError;

/// Softmax with the maximum logit subtracted before exponentiation.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    for p in &mut out {
        *p = *p / sum;
    }
    out
}

/// Cross-entropy of `softmax(logits)` against `label`, with `dloss/dlogits`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>), NnError> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    Ok((loss, grad))
}
