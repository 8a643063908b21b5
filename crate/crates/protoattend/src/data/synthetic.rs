//! Deterministic synthetic classification data: isotropic gaussian blobs
//! whose means sit on distinct corners of the unit hypercube, so any number
//! of classes up to 2^dim stays linearly separable at small spread.

use super::{Dataset, SplitTag};
use crate::tensor::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Class `c` is centered on the hypercube corner whose coordinate bits are
/// the binary digits of `c`.
fn class_mean(class: usize, dim: usize) -> Vec<f64> {
    (0..dim).map(|d| ((class >> d) & 1) as f64).collect()
}

/// Generate `per_class` samples for each of `classes` classes, shuffled into
/// a single split. The same seed always yields the same bytes.
pub fn synthetic_gaussians(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    split: SplitTag,
) -> Dataset {
    assert!(classes >= 2, "need at least two classes");
    assert!(dim < usize::BITS as usize && classes <= 1 << dim, "hypercube with dim {dim} has too few corners for {classes} classes");
    assert!(per_class > 0, "per_class must be positive");
    assert!(spread >= 0.0 && spread.is_finite(), "spread must be a finite non-negative number");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for class in 0..classes {
        let mean = class_mean(class, dim);
        for _ in 0..per_class {
            let row: Vec<f64> = mean
                .iter()
                .map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push((row, class));
        }
    }
    rows.shuffle(&mut rng);

    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (row, label) in rows {
        features.extend(row);
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, dim], features), labels, classes, split)
}

/// Unlabelled uniform noise rows in [0, 1), for scoring against data the
/// model was never trained on.
pub fn uniform_noise(n: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(vec![n, dim], data)
}
