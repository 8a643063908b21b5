//! Shared fixtures for the criterion benchmarks: deterministic random
//! tensors and a small trained-shape model to run kernels against.

use protoattend::data::synthetic::synthetic_gaussians;
use protoattend::{CandidateDatabase, Dataset, ModelConfig, ModelParameters, SplitTag, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1), fixed seed per (rows, cols) pair.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data)
}

/// Model shaped like the image-scale configuration, untrained weights.
pub fn image_scale_config() -> ModelConfig {
    ModelConfig {
        input_dim: 784,
        encoder_hidden_dims: vec![256, 128],
        d_att: 16,
        d_out: 64,
        num_classes: 10,
        ..ModelConfig::default()
    }
}

pub struct Fixture {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub batch: Dataset,
    pub database: CandidateDatabase,
}

/// Synthetic batch plus a precomputed candidate database under one model.
pub fn synthetic_fixture(batch_rows: usize, db_rows: usize) -> Fixture {
    let config = ModelConfig { input_dim: 32, encoder_hidden_dims: vec![64, 32], ..ModelConfig::default() };
    let params = ModelParameters::init(&config, 5);
    let per_class = (batch_rows + db_rows).div_ceil(config.num_classes);
    let pool = synthetic_gaussians(config.num_classes, config.input_dim, per_class, 0.2, 11, SplitTag::Train);
    let batch = pool.subset(&(0..batch_rows).collect::<Vec<_>>());
    let db_rows = pool.subset(&(batch_rows..batch_rows + db_rows).collect::<Vec<_>>());
    let indices: Vec<usize> = (0..db_rows.len()).collect();
    let mut database = CandidateDatabase::new(db_rows.features, db_rows.labels, indices, config.num_classes);
    database.precompute(&params, &config);
    Fixture { config, params, batch, database }
}
