//! Candidate databases: the pool of labeled training rows that predictions
//! attend over. Keys and values can be precomputed once per parameter
//! snapshot; a fingerprint ties the cached encoding to the exact weights.

use crate::model::{encode, ModelConfig, ModelError, ModelParameters};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EncodedCandidates {
    pub keys: Tensor,
    pub values: Tensor,
    pub params_fingerprint: [u8; 32],
}

#[derive(Clone, Debug)]
pub struct CandidateDatabase {
    pub features: Tensor,
    labels: Vec<usize>,
    source_indices: Vec<usize>,
    num_classes: usize,
    encoded: Option<EncodedCandidates>,
}

impl CandidateDatabase {
    pub fn new(features: Tensor, labels: Vec<usize>, source_indices: Vec<usize>, num_classes: usize) -> CandidateDatabase {
        assert_eq!(features.rows(), labels.len(), "{} feature rows vs {} labels", features.rows(), labels.len());
        assert_eq!(labels.len(), source_indices.len(), "labels and source indices must align");
        assert!(
            labels.iter().all(|&y| y < num_classes),
            "candidate label out of range for {num_classes} classes"
        );
        CandidateDatabase { features, labels, source_indices, num_classes, encoded: None }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn encoded(&self) -> Option<&EncodedCandidates> {
        self.encoded.as_ref()
    }

    /// Encode all candidates under the given parameters and cache the result.
    /// Encoding the same parameters again reproduces the same cache.
    pub fn precompute(&mut self, params: &ModelParameters, config: &ModelConfig) {
        let enc = encode(&self.features, params, config);
        self.encoded = Some(EncodedCandidates {
            keys: enc.keys,
            values: enc.values,
            params_fingerprint: params.fingerprint(),
        });
    }

    pub fn clear_encoding(&mut self) {
        self.encoded = None;
    }

    /// Candidate keys and values for these parameters: the cached encoding if
    /// it matches, a fresh one otherwise. Both routes run the same kernels on
    /// the same rows, so the two results are bitwise identical.
    pub fn keys_values(&self, params: &ModelParameters, config: &ModelConfig) -> Result<(Tensor, Tensor), ModelError> {
        match &self.encoded {
            Some(enc) => {
                if enc.params_fingerprint != params.fingerprint() {
                    return Err(ModelError::StaleDatabase);
                }
                Ok((enc.keys.clone(), enc.values.clone()))
            }
            None => {
                let enc = encode(&self.features, params, config);
                Ok((enc.keys, enc.values))
            }
        }
    }
}
