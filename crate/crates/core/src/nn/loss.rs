use alloc::vec::Vec;

use crate::math::{exp, log, log_sigmoid, sigmoid};

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|v| exp(v - max)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `-ln(max(pmf[label], 1e-12))`
pub fn cross_entropy(pmf: &[f64], label: usize) -> f64 {
    -log(pmf[label].max(PROB_FLOOR))
}

/// Gradient of [`cross_entropy`] with respect to the PMF entries.
pub fn cross_entropy_backward(pmf: &[f64], label: usize) -> Vec<f64> {
    let mut g = alloc::vec![0.0; pmf.len()];
    if pmf[label] > PROB_FLOOR {
        g[label] = -1.0 / pmf[label];
    }
    g
}

/// Fused softmax + cross-entropy on logits: returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log(z.iter().map(|v| exp(v - max)).sum::<f64>());
    let mut grad = softmax(z);
    grad[label] -= 1.0;
    (lse - z[label], grad)
}

/// Cross-entropy of a sigmoid output `q = sigmoid(z)` read as the probability
/// of label 0. Returns the loss and `d loss / dz`.
pub fn sigmoid_cross_entropy(z: f64, label: usize) -> (f64, f64) {
    let q = sigmoid(z);
    if label == 0 {
        (-log_sigmoid(z), q - 1.0)
    } else {
        (-log_sigmoid(-z), q)
    }
}
