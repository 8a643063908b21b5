//! Normalizations onto the probability simplex and the losses defined on
//! attention rows. Sparsemax is the Euclidean projection of a score vector
//! onto the simplex (sort, threshold, clip); unlike softmax it can return
//! exact zeros, which is what makes attention weights readable.

use crate::tensor::Tensor;

/// Added inside the log of the entropy regularizer so zero weights stay finite.
pub const ENTROPY_EPS: f64 = 1e-10;

/// Non-negative vector summing to one (within 1e-6), enforced at construction.
#[derive(Clone, Debug)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(v: Vec<f64>) -> SimplexVector {
        assert!(!v.is_empty(), "simplex vector must be non-empty");
        let sum: f64 = v.iter().sum();
        assert!(
            v.iter().all(|&p| p >= 0.0),
            "simplex vector has a negative entry: {v:?}"
        );
        assert!(
            (sum - 1.0).abs() <= 1e-6,
            "simplex vector sums to {sum}, expected 1"
        );
        SimplexVector(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for SimplexVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Which entries of a sparsemax output are non-zero, plus the threshold tau
/// that was subtracted. Needed to backpropagate through the projection.
#[derive(Clone, Debug)]
pub struct SparsemaxSupport {
    pub support: Vec<bool>,
    pub threshold: f64,
}

pub(crate) fn softmax_row(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty(), "softmax input must be non-empty");
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(z: &[f64]) -> SimplexVector {
    SimplexVector::new(softmax_row(z))
}

pub(crate) fn sparsemax_row(z: &[f64]) -> (Vec<f64>, SparsemaxSupport) {
    assert!(!z.is_empty(), "sparsemax input must be non-empty");
    assert!(z.iter().all(|v| v.is_finite()), "sparsemax input must be finite: {z:?}");
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Largest k with 1 + k * z_(k) > sum of the k largest entries. Ties at the
    // boundary satisfy the same inequality, so they join the support together.
    let mut cumsum = 0.0;
    let mut k_sum = 0.0;
    let mut k = 0usize;
    for (idx, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let j = (idx + 1) as f64;
        if 1.0 + j * v > cumsum {
            k = idx + 1;
            k_sum = cumsum;
        }
    }
    let threshold = (k_sum - 1.0) / k as f64;
    let out: Vec<f64> = z.iter().map(|&v| (v - threshold).max(0.0)).collect();
    let support = out.iter().map(|&p| p > 0.0).collect();
    (out, SparsemaxSupport { support, threshold })
}

pub fn sparsemax(z: &[f64]) -> (SimplexVector, SparsemaxSupport) {
    let (p, support) = sparsemax_row(z);
    (SimplexVector::new(p), support)
}

/// Jacobian-vector product of sparsemax: on the support, subtract the support
/// mean of the upstream gradient; off the support the gradient is exactly zero.
pub fn sparsemax_jvp(support: &SparsemaxSupport, upstream: &[f64]) -> Vec<f64> {
    assert_eq!(support.support.len(), upstream.len());
    let k = support.support.iter().filter(|&&s| s).count();
    assert!(k > 0, "sparsemax support cannot be empty");
    let mean = support
        .support
        .iter()
        .zip(upstream)
        .filter(|(s, _)| **s)
        .map(|(_, &u)| u)
        .sum::<f64>()
        / k as f64;
    support
        .support
        .iter()
        .zip(upstream)
        .map(|(&s, &u)| if s { u - mean } else { 0.0 })
        .collect()
}

/// Mean over rows of the row entropy -sum_j p log(p + eps). Low values mean
/// concentrated attention; used as the sparsity regularizer.
pub fn entropy_sparsity(p: &Tensor) -> f64 {
    let rows = p.rows();
    let cols = p.cols();
    assert!(rows > 0, "entropy over an empty batch is undefined");
    let mut total = 0.0;
    for row in p.data.chunks_exact(cols) {
        for &v in row {
            total -= v * (v + ENTROPY_EPS).ln();
        }
    }
    total / rows as f64
}

/// Mean softmax cross-entropy of logit rows against integer labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> f64 {
    let b = logits.rows();
    let c = logits.cols();
    assert_eq!(b, labels.len(), "{b} logit rows but {} labels", labels.len());
    assert!(b > 0, "cross-entropy over an empty batch is undefined");
    let mut total = 0.0;
    for (row, &y) in logits.data.chunks_exact(c).zip(labels) {
        assert!(y < c, "label {y} out of range for {c} classes");
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / b as f64
}
