//! Dataset container, loaders (IDX images, headed CSV, synthetic Gaussians),
//! per-sample standardization, checkpoints, and the run configuration format.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod idx;
pub mod synthetic;

use crate::tensor::Tensor;
use std::path::PathBuf;

/// Variance floor used when standardizing a feature row.
pub const STANDARDIZE_VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message} (byte offset {offset})", path.display())]
    Idx { path: PathBuf, offset: u64, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Csv { path: PathBuf, line: usize, message: String },
    #[error("{} has {image_count} images but {} has {label_count} labels", images.display(), labels.display())]
    CountMismatch { images: PathBuf, labels: PathBuf, image_count: usize, label_count: usize },
    #[error("{}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },
    #[error("{}: stored parameter fingerprint does not match payload (file corrupted?)", path.display())]
    FingerprintMismatch { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// N x dim feature matrix.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, split: SplitTag) -> Dataset {
        assert_eq!(features.rows(), labels.len(), "{} feature rows vs {} labels", features.rows(), labels.len());
        assert!(
            labels.iter().all(|&y| y < num_classes),
            "label out of range for {num_classes} classes"
        );
        Dataset { features, labels, num_classes, split }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Clone the given rows into a new dataset (same split tag and classes).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(Tensor::new(vec![indices.len(), dim], data), labels, self.num_classes, self.split)
    }

    /// Split off the trailing fraction as a validation set.
    pub fn split_tail(&self, valid_fraction: f64) -> (Dataset, Dataset) {
        assert!((0.0..1.0).contains(&valid_fraction), "valid fraction must lie in [0, 1)");
        let n_valid = (self.len() as f64 * valid_fraction).floor() as usize;
        let cut = self.len() - n_valid;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        let mut train = self.subset(&head);
        train.split = SplitTag::Train;
        let mut valid = self.subset(&tail);
        valid.split = SplitTag::Valid;
        (train, valid)
    }
}

/// Rescale every row to zero mean and unit variance, flooring the variance so
/// constant rows map to zeros. Applying it twice changes nothing beyond
/// floating-point jitter.
pub fn standardize_rows(t: &mut Tensor) {
    let cols = t.cols();
    if cols == 0 {
        return;
    }
    for row in t.data.chunks_exact_mut(cols) {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / var.max(STANDARDIZE_VAR_FLOOR).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * istd;
        }
    }
}

pub fn standardize_per_sample(dataset: &mut Dataset) {
    standardize_rows(&mut dataset.features);
}
