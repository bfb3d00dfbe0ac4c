use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_logits: Vec<f64>,
}

/// Class-weighted softmax cross-entropy of a single example.
pub fn softmax_cross_entropy(logits: &[f64], label: usize, class_weight: f64) -> Result<CrossEntropy> {
    if label >= logits.len() {
        return Err(Error::Index { index: label, len: logits.len() });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
    let probs = softmax(logits);
    let loss = -class_weight * (logits[label] - max - log_sum);
    let grad_logits = probs
        .iter()
        .enumerate()
        .map(|(c, p)| class_weight * (p - if c == label { 1.0 } else { 0.0 }))
        .collect();
    Ok(CrossEntropy { loss, probs, grad_logits })
}
