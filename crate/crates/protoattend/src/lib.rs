//! Attention-based prototypical learning. Each prediction is assembled from a
//! small weighted set of training examples (prototypes), so the weights
//! themselves explain the decision and their agreement with the prediction
//! yields a confidence score.

pub mod data;
pub mod database;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod simplex;
pub mod tensor;
pub mod train;

pub use data::config::{DataConfig, DataSource, RunConfig, TrainSettings};
pub use data::{DataError, Dataset, SplitTag};
pub use database::CandidateDatabase;
pub use eval::{EvalError, MetricsSummary, SplitEvaluation};
pub use graph::{Graph, NodeId};
pub use model::{
    AttentionMatrix, EncodedBatch, LossBreakdown, ModelConfig, ModelParameters, Normalization,
    ObjectiveVariant, PredictionReport,
};
pub use optim::{AdamState, LrSchedule};
pub use simplex::{SimplexVector, SparsemaxSupport};
pub use tensor::Tensor;
pub use train::{TrainError, TrainLog, TrainOutcome, TrainRecord};
