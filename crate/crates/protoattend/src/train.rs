//! Training loop: minibatch Adam over the relational attention objective
//! with global gradient clipping, a staircase learning-rate schedule,
//! optional label noise, and periodic evaluation against a held-out split.
//! Every random choice flows from one base seed through fixed stream
//! offsets, so a full run is reproducible bit for bit.

use crate::data::config::TrainSettings;
use crate::data::Dataset;
use crate::database::CandidateDatabase;
use crate::eval::{confidence_split_means, evaluate_split};
use crate::model::{build_objective, LossBreakdown, ModelConfig, ModelParameters};
use crate::optim::{adam_step, clip_global_norm, AdamState, LrSchedule, NonFiniteGradient, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite at iteration {iteration} ({components})")]
    NonFiniteLoss { iteration: u64, components: String },
    #[error("gradient failure at iteration {iteration}")]
    Gradient {
        iteration: u64,
        #[source]
        source: NonFiniteGradient,
    },
    #[error("batch of {requested} requested but the training set has {available} rows")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("candidate database of {requested} requested but only {available} rows are eligible")]
    DatabaseTooLarge { requested: usize, available: usize },
}

pub const TRAIN_LOG_HEADER: &str = "iteration,loss_total,loss_alpha0,loss_alpha1,loss_alphahalf,loss_sparse,loss_conf,acc_alpha0,acc_alpha1,mean_conf_correct,mean_conf_incorrect";

#[derive(Clone, Copy, Debug)]
pub struct TrainRecord {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub acc_alpha0: f64,
    pub acc_alpha1: f64,
    pub mean_conf_correct: f64,
    pub mean_conf_incorrect: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.iteration,
                r.loss.total,
                r.loss.alpha0,
                r.loss.alpha1,
                r.loss.alpha_half,
                r.loss.sparse,
                r.loss.conf,
                r.acc_alpha0,
                r.acc_alpha1,
                r.mean_conf_correct,
                r.mean_conf_incorrect
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), crate::data::DataError> {
        std::fs::write(path, self.to_csv())
            .map_err(|source| crate::data::DataError::Io { path: path.to_path_buf(), source })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: ModelParameters,
    /// Snapshot with the best held-out attention-path accuracy, or the
    /// final parameters when no evaluation ever ran.
    pub best_params: ModelParameters,
    pub best_iteration: u64,
    pub log: TrainLog,
}

/// Sample `count` distinct row indices from `0..n`, skipping `exclude`.
/// The result is ascending, so downstream row gathering is order-stable.
pub fn sample_candidate_db(
    rng: &mut ChaCha8Rng,
    n: usize,
    exclude: &[usize],
    count: usize,
) -> Result<Vec<usize>, TrainError> {
    let mut excluded = vec![false; n];
    for &i in exclude {
        excluded[i] = true;
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
    if eligible.len() < count {
        return Err(TrainError::DatabaseTooLarge { requested: count, available: eligible.len() });
    }
    let mut picks: Vec<usize> =
        rand::seq::index::sample(rng, eligible.len(), count).into_iter().map(|i| eligible[i]).collect();
    picks.sort_unstable();
    Ok(picks)
}

/// Replace round(ratio * len) labels with a different class, chosen
/// uniformly among the other classes. Returns how many were flipped.
pub fn inject_label_noise(rng: &mut ChaCha8Rng, labels: &mut [usize], num_classes: usize, ratio: f64) -> usize {
    assert!((0.0..1.0).contains(&ratio), "noise ratio must lie in [0, 1), got {ratio}");
    assert!(num_classes >= 2, "label noise needs at least two classes");
    let count = (ratio * labels.len() as f64).round() as usize;
    let victims = rand::seq::index::sample(rng, labels.len(), count);
    for i in victims {
        let k = rng.gen_range(0..num_classes - 1);
        labels[i] = k + usize::from(k >= labels[i]);
    }
    count
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ModelParameters,
    adam: &mut AdamState,
    train: &Dataset,
    batch_indices: &[usize],
    config: &ModelConfig,
    settings: &TrainSettings,
    cand_rng: &mut ChaCha8Rng,
    lr: f64,
    iteration: u64,
) -> Result<LossBreakdown, TrainError> {
    let exclude: &[usize] = if settings.exclude_batch_from_candidates { batch_indices } else { &[] };
    let db_indices = sample_candidate_db(cand_rng, train.len(), exclude, settings.db_train)?;
    let batch = train.subset(batch_indices);
    let candidates = train.subset(&db_indices);

    let mut objective = build_objective(
        &batch.features,
        &batch.labels,
        &candidates.features,
        &candidates.labels,
        params,
        config,
        iteration,
        settings.iterations as u64,
    );
    let breakdown = objective.breakdown;
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFiniteLoss { iteration, components: format!("{breakdown:?}") });
    }
    objective.graph.backward(objective.total);

    let ids = objective.param_nodes.ids();
    let mut named = params.named_mut();
    assert_eq!(ids.len(), named.len(), "graph parameters must mirror the model parameters");
    for ((_, tensor), id) in named.iter_mut().zip(&ids) {
        tensor.grad = Some(match objective.graph.grad(*id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tensor.numel()],
        });
    }
    {
        let mut grads: Vec<&mut Vec<f64>> =
            named.iter_mut().map(|(_, t)| t.grad.as_mut().unwrap()).collect();
        clip_global_norm(&mut grads, settings.clip_norm);
    }
    adam_step(adam, &mut named, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        .map_err(|source| TrainError::Gradient { iteration, source })?;
    Ok(breakdown)
}

/// Train a fresh model. Evaluation runs every `eval_every` iterations
/// against `valid_set` (or the training set when it is empty) using a
/// fixed random subset of training rows as the candidate database. Label
/// noise, when configured, corrupts only the training copy; the held-out
/// split keeps its true labels.
pub fn train(
    train_set: &Dataset,
    valid_set: &Dataset,
    config: &ModelConfig,
    settings: &TrainSettings,
) -> Result<TrainOutcome, TrainError> {
    config.validate().expect("model config must be validated before training");
    assert_eq!(train_set.dim(), config.input_dim, "training data width vs model input width");
    assert!(
        train_set.labels.iter().all(|&y| y < config.num_classes),
        "training label outside the model's class range"
    );
    assert!(!train_set.is_empty(), "training set is empty");
    let n = train_set.len();
    if settings.batch_size > n {
        return Err(TrainError::BatchTooLarge { requested: settings.batch_size, available: n });
    }
    let floor = if settings.exclude_batch_from_candidates { n - settings.batch_size } else { n };
    if settings.db_train > floor {
        return Err(TrainError::DatabaseTooLarge { requested: settings.db_train, available: floor });
    }

    let mut batch_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(1));
    let mut cand_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(2));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(3));
    let mut evaldb_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(4));

    let noisy;
    let train_data: &Dataset = if settings.noise_ratio > 0.0 {
        let mut d = train_set.clone();
        inject_label_noise(&mut noise_rng, &mut d.labels, config.num_classes, settings.noise_ratio);
        noisy = d;
        &noisy
    } else {
        train_set
    };
    let eval_set: &Dataset = if valid_set.is_empty() { train_data } else { valid_set };

    let mut params = ModelParameters::init(config, settings.seed);
    let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&sizes);
    let schedule = LrSchedule::new(settings.learning_rate, settings.decay_rate, settings.decay_every as u64);

    let eval_db_size = settings.db_infer.min(n);
    let mut eval_db_indices: Vec<usize> =
        rand::seq::index::sample(&mut evaldb_rng, n, eval_db_size).into_iter().collect();
    eval_db_indices.sort_unstable();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParameters, u64)> = None;
    for i in 0..settings.iterations as u64 {
        let mut batch: Vec<usize> =
            rand::seq::index::sample(&mut batch_rng, n, settings.batch_size).into_iter().collect();
        batch.sort_unstable();
        let lr = schedule.rate_at(i);
        let breakdown =
            train_step(&mut params, &mut adam, train_data, &batch, config, settings, &mut cand_rng, lr, i)?;

        let iteration = i + 1;
        if iteration % settings.eval_every as u64 == 0 {
            let db_rows = train_data.subset(&eval_db_indices);
            let db = CandidateDatabase::new(
                db_rows.features,
                db_rows.labels,
                eval_db_indices.clone(),
                config.num_classes,
            );
            let ev = evaluate_split(eval_set, &db, &params, config)
                .expect("evaluation during training cannot fail on a fresh database");
            let (mean_conf_correct, mean_conf_incorrect) =
                confidence_split_means(&ev.confidences, &ev.correct);
            log.records.push(TrainRecord {
                iteration,
                loss: breakdown,
                acc_alpha0: ev.accuracy_alpha0,
                acc_alpha1: ev.accuracy_alpha1,
                mean_conf_correct,
                mean_conf_incorrect,
            });
            let improved = best.as_ref().map_or(true, |(acc, _, _)| ev.accuracy_alpha1 > *acc);
            if improved {
                best = Some((ev.accuracy_alpha1, params.clone(), iteration));
            }
        }
    }

    let (best_params, best_iteration) = match best {
        Some((_, p, it)) => (p, it),
        None => (params.clone(), settings.iterations as u64),
    };
    Ok(TrainOutcome { final_params: params, best_params, best_iteration, log })
}
