//! Losses composed from tape primitives.

use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Row-wise weights selecting `labels[b]` out of `classes` columns.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(GradError::invalid(
                "one_hot",
                format!("label {y} out of range for {classes} classes"),
            ));
        }
        data[b * classes + y] = T::one();
    }
    Tensor::new(&[labels.len(), classes], data)
}

/// Mean softmax cross-entropy of `[B, N]` logits against integer labels.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits)?.to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(GradError::shape("cross_entropy", &shape, &[labels.len()]));
    }
    let target = tape.constant(one_hot(labels, shape[1])?);
    weighted_nll(tape, logits, target, labels.len())
}

/// `-(1/B) * sum(weights ⊙ log_softmax(logits))`.
pub fn weighted_nll<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    weights: Var,
    batch: usize,
) -> Result<Var> {
    let logp = tape.log_softmax(logits)?;
    let picked = tape.mul(weights, logp)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -T::one() / T::of(batch as f64))
}

/// Per-row cross-entropy values (no tape), for reporting.
pub fn per_sample_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Vec<f64> {
    let n = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks(n)
        .zip(labels)
        .map(|(row, &y)| (crate::ops_util::log_sum_exp(row) - row[y]).as_f64())
        .collect()
}
