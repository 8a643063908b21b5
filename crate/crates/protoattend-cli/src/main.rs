//! Command line for training, evaluating, and inspecting attention-based
//! prototype models. Exit codes: 0 success, 2 for input or usage problems,
//! 3 when otherwise-valid inputs do not fit together (shape or label
//! mismatches), 1 for internal failures such as a diverged run.

use clap::{Parser, Subcommand};
use protoattend::data::checkpoint::{load_checkpoint, save_checkpoint};
use protoattend::data::config::{load_run_config, ConfigError, DataSource, IncompatibleConfig, RunConfig};
use protoattend::data::csv::load_csv;
use protoattend::data::idx::load_idx;
use protoattend::data::synthetic::{synthetic_gaussians, uniform_noise};
use protoattend::data::{standardize_per_sample, standardize_rows, DataError, Dataset, SplitTag};
use protoattend::eval::{
    evaluate_split, export_prototypes, roc_auc, score_confidences, summarize, write_bins_csv,
    write_roc_csv, write_sweep_csv, EvalError,
};
use protoattend::model::{predict, ModelConfig, ModelParameters};
use protoattend::train::{inject_label_noise, train, TrainError};
use protoattend::{CandidateDatabase, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "protoattend", version, about = "Attention-based prototypical learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, a training log, and a manifest
    Train {
        /// Run configuration file; omit for the built-in synthetic default
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labelled split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: idx:IMAGES,LABELS | csv:PATH[,label=COL] |
        /// synthetic:classes=..,dim=..,per_class=..,spread=..,seed=..
        #[arg(long)]
        data: String,
        /// Labelled rows for the candidate database, as a data spec
        #[arg(long)]
        database: String,
        #[arg(long)]
        out: PathBuf,
        /// Subsample the database to this many rows
        #[arg(long)]
        db_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        db_seed: u64,
        /// Reliability-bin count
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Comma-separated ascending confidence thresholds
        #[arg(long)]
        thresholds: Option<String>,
        /// Skip per-sample feature standardization
        #[arg(long)]
        no_standardize: bool,
    },
    /// Write the confidence-threshold sweep for a checkpoint
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        database: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        db_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        db_seed: u64,
        #[arg(long)]
        thresholds: Option<String>,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Score confidence separation between a split and out-of-distribution data
    Ood {
        #[arg(long)]
        checkpoint: PathBuf,
        /// In-distribution split, as a data spec
        #[arg(long)]
        data: String,
        #[arg(long)]
        database: String,
        #[arg(long)]
        out: PathBuf,
        /// Out-of-distribution split; omit for matched uniform noise
        #[arg(long)]
        ood: Option<String>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        db_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        db_seed: u64,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Export the prototypes behind individual predictions
    Prototypes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long)]
        database: String,
        #[arg(long)]
        out: PathBuf,
        /// Prototypes per input
        #[arg(long, default_value_t = 3)]
        top: usize,
        /// How many inputs to export, from the front of the split
        #[arg(long, default_value_t = 16)]
        limit: usize,
        #[arg(long)]
        db_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        db_seed: u64,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Train across label-noise ratios, with and without attention
    NoiseBench {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated noise ratios in [0, 1)
        #[arg(long, default_value = "0.0,0.2,0.4")]
        ratios: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Incompatible(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Incompatible(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<IncompatibleConfig> for CliError {
    fn from(e: IncompatibleConfig) -> CliError {
        CliError::Incompatible(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::BatchTooLarge { .. } | TrainError::DatabaseTooLarge { .. } => {
                CliError::Incompatible(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> CliError {
        match e {
            EvalError::EmptySplit | EvalError::EmptyDatabase => CliError::Usage(e.to_string()),
            EvalError::Model(m) => CliError::Internal(m.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, out } => cmd_train(config.as_deref(), &out),
        Command::Eval { checkpoint, data, database, out, db_size, db_seed, bins, thresholds, no_standardize } => {
            cmd_eval(&checkpoint, &data, &database, &out, db_size, db_seed, bins, thresholds.as_deref(), !no_standardize)
        }
        Command::Sweep { checkpoint, data, database, out, db_size, db_seed, thresholds, no_standardize } => {
            cmd_sweep(&checkpoint, &data, &database, &out, db_size, db_seed, thresholds.as_deref(), !no_standardize)
        }
        Command::Ood { checkpoint, data, database, out, ood, noise_seed, db_size, db_seed, no_standardize } => {
            cmd_ood(&checkpoint, &data, &database, &out, ood.as_deref(), noise_seed, db_size, db_seed, !no_standardize)
        }
        Command::Prototypes { checkpoint, data, database, out, top, limit, db_size, db_seed, no_standardize } => {
            cmd_prototypes(&checkpoint, &data, &database, &out, top, limit, db_size, db_seed, !no_standardize)
        }
        Command::NoiseBench { config, ratios, out } => cmd_noise_bench(config.as_deref(), &ratios, &out),
    }
}

fn usage(message: String) -> CliError {
    CliError::Usage(message)
}

fn incompatible(message: String) -> CliError {
    CliError::Incompatible(message)
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| usage(format!("cannot create output directory {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

/// Parse a data spec:
///   idx:IMAGES,LABELS
///   csv:PATH[,label=COLUMN]
///   synthetic:classes=4,dim=16,per_class=50,spread=0.15,seed=99
fn parse_data_spec(spec: &str, split: SplitTag) -> Result<Dataset, CliError> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| usage(format!("data spec '{spec}' must start with idx:, csv:, or synthetic:")))?;
    match kind {
        "idx" => {
            let (images, labels) = rest
                .split_once(',')
                .ok_or_else(|| usage(format!("idx spec '{spec}' needs two comma-separated paths")))?;
            Ok(load_idx(Path::new(images.trim()), Path::new(labels.trim()), split)?)
        }
        "csv" => {
            let mut parts = rest.split(',').map(str::trim);
            let path = parts
                .next()
                .filter(|p| !p.is_empty())
                .ok_or_else(|| usage(format!("csv spec '{spec}' needs a path")))?;
            let mut label_column = "label".to_string();
            for part in parts {
                match part.split_once('=') {
                    Some(("label", column)) => label_column = column.to_string(),
                    _ => return Err(usage(format!("unknown csv spec option '{part}'"))),
                }
            }
            Ok(load_csv(Path::new(path), &label_column, split)?)
        }
        "synthetic" => {
            let (mut classes, mut dim, mut per_class, mut spread, mut seed) = (4usize, 16usize, 50usize, 0.15f64, 99u64);
            if !rest.is_empty() {
                for part in rest.split(',') {
                    let (key, value) = part
                        .split_once('=')
                        .ok_or_else(|| usage(format!("synthetic spec option '{part}' is not key=value")))?;
                    let bad = |what: &str| usage(format!("synthetic spec: {key}={value} is not {what}"));
                    match key.trim() {
                        "classes" => classes = value.trim().parse().map_err(|_| bad("an integer"))?,
                        "dim" => dim = value.trim().parse().map_err(|_| bad("an integer"))?,
                        "per_class" => per_class = value.trim().parse().map_err(|_| bad("an integer"))?,
                        "spread" => spread = value.trim().parse().map_err(|_| bad("a number"))?,
                        "seed" => seed = value.trim().parse().map_err(|_| bad("an integer"))?,
                        other => return Err(usage(format!("unknown synthetic spec key '{other}'"))),
                    }
                }
            }
            if classes < 2 || dim == 0 || per_class == 0 || !(spread >= 0.0 && spread.is_finite()) {
                return Err(usage(format!("synthetic spec '{spec}' is out of range")));
            }
            if dim >= usize::BITS as usize || classes > 1usize << dim {
                return Err(usage(format!("synthetic spec: {classes} classes need more than {dim} dimensions")));
            }
            Ok(synthetic_gaussians(classes, dim, per_class, spread, seed, split))
        }
        other => Err(usage(format!("unknown data spec kind '{other}' (expected idx, csv, or synthetic)"))),
    }
}

fn load_split(spec: &str, split: SplitTag, standardize: bool, model: &ModelConfig) -> Result<Dataset, CliError> {
    let mut ds = parse_data_spec(spec, split)?;
    if standardize {
        standardize_per_sample(&mut ds);
    }
    if ds.dim() != model.input_dim {
        return Err(incompatible(format!(
            "data spec '{spec}' has {} features per sample but the checkpoint expects {}",
            ds.dim(),
            model.input_dim
        )));
    }
    if let Some(&y) = ds.labels.iter().max() {
        if y >= model.num_classes {
            return Err(incompatible(format!(
                "data spec '{spec}' contains label {y} but the checkpoint knows {} classes",
                model.num_classes
            )));
        }
    }
    Ok(ds)
}

fn build_database(
    spec: &str,
    db_size: Option<usize>,
    db_seed: u64,
    standardize: bool,
    params: &ModelParameters,
    model: &ModelConfig,
) -> Result<CandidateDatabase, CliError> {
    let ds = load_split(spec, SplitTag::Train, standardize, model)?;
    let indices: Vec<usize> = match db_size {
        Some(k) if k < ds.len() => {
            if k == 0 {
                return Err(usage("--db-size must be at least 1".to_string()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(db_seed);
            let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, ds.len(), k).into_iter().collect();
            picks.sort_unstable();
            picks
        }
        _ => (0..ds.len()).collect(),
    };
    let rows = ds.subset(&indices);
    let mut db = CandidateDatabase::new(rows.features, rows.labels, indices, model.num_classes);
    db.precompute(params, model);
    Ok(db)
}

fn parse_thresholds(arg: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(s) = arg else {
        let mut t: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
        t.push(0.999);
        return Ok(t);
    };
    let values: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| usage(format!("threshold '{p}' is not a number"))))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(usage("threshold list is empty".to_string()));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(usage(format!("thresholds must lie in [0, 1], got {s}")));
    }
    if !values.windows(2).all(|w| w[0] < w[1]) {
        return Err(usage(format!("thresholds must be strictly ascending, got {s}")));
    }
    Ok(values)
}

/// Load the train and test splits named by the config's data section,
/// standardized when configured.
fn load_source(rc: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let (mut train_all, mut test) = match &rc.data.source {
        DataSource::Idx { train_images, train_labels, test_images, test_labels } => (
            load_idx(train_images, train_labels, SplitTag::Train)?,
            load_idx(test_images, test_labels, SplitTag::Test)?,
        ),
        DataSource::Csv { train, test, label_column } => (
            load_csv(train, label_column, SplitTag::Train)?,
            load_csv(test, label_column, SplitTag::Test)?,
        ),
        DataSource::Synthetic { classes, dim, per_class_train, per_class_test, spread, data_seed } => (
            synthetic_gaussians(*classes, *dim, *per_class_train, *spread, *data_seed, SplitTag::Train),
            synthetic_gaussians(*classes, *dim, *per_class_test, *spread, data_seed.wrapping_add(1), SplitTag::Test),
        ),
    };
    if train_all.dim() != test.dim() {
        return Err(incompatible(format!(
            "train split has {} features per sample but test has {}",
            train_all.dim(),
            test.dim()
        )));
    }
    if rc.data.standardize {
        standardize_per_sample(&mut train_all);
        standardize_per_sample(&mut test);
    }
    let classes = train_all.num_classes.max(test.num_classes);
    train_all.num_classes = classes;
    test.num_classes = classes;
    Ok((train_all, test))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(load_run_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Candidate database over training rows for post-training evaluation,
/// sampled with its own seed stream so results do not depend on how many
/// training iterations ran.
fn eval_database(
    train_set: &Dataset,
    size: usize,
    seed: u64,
    params: &ModelParameters,
    model: &ModelConfig,
) -> CandidateDatabase {
    let k = size.min(train_set.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = rand::seq::index::sample(&mut rng, train_set.len(), k).into_iter().collect();
    indices.sort_unstable();
    let rows = train_set.subset(&indices);
    let mut db = CandidateDatabase::new(rows.features, rows.labels, indices, model.num_classes);
    db.precompute(params, model);
    db
}

fn cmd_train(config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let rc = load_config(config_path)?;
    let (train_all, test) = load_source(&rc)?;
    let (train_set, valid) = train_all.split_tail(rc.data.valid_fraction);
    let model = rc.resolved_model(train_set.dim(), train_all.num_classes)?;

    let outcome = train(&train_set, &valid, &model, &rc.train)?;

    ensure_dir(out)?;
    save_checkpoint(&out.join("checkpoint_final.bin"), &outcome.final_params, &model)?;
    save_checkpoint(&out.join("checkpoint_best.bin"), &outcome.best_params, &model)?;
    write_file(&out.join("training_log.csv"), &outcome.log.to_csv())?;

    let test_metrics = if test.is_empty() {
        serde_json::Value::Null
    } else {
        let db = eval_database(&train_set, rc.train.db_infer, rc.train.seed.wrapping_add(5), &outcome.best_params, &model);
        let ev = evaluate_split(&test, &db, &outcome.best_params, &model)?;
        serde_json::json!({
            "samples": test.len(),
            "accuracy_alpha0": ev.accuracy_alpha0,
            "accuracy_alpha1": ev.accuracy_alpha1,
            "accuracy_predict": ev.accuracy_predict,
        })
    };
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": rc.train.seed,
        "iterations": rc.train.iterations,
        "best_iteration": outcome.best_iteration,
        "evaluations": outcome.log.records.len(),
        "objective": model.objective.as_str(),
        "normalization": model.normalization.as_str(),
        "test": test_metrics,
    });
    write_file(&out.join("manifest.json"), &format!("{:#}\n", manifest))?;
    println!(
        "trained {} iterations, best at {}; wrote {}",
        rc.train.iterations,
        outcome.best_iteration,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    data: &str,
    database: &str,
    out: &Path,
    db_size: Option<usize>,
    db_seed: u64,
    bins: usize,
    thresholds: Option<&str>,
    standardize: bool,
) -> Result<(), CliError> {
    if bins == 0 {
        return Err(usage("--bins must be at least 1".to_string()));
    }
    let thresholds = parse_thresholds(thresholds)?;
    let (params, model) = load_checkpoint(checkpoint)?;
    let ds = load_split(data, SplitTag::Test, standardize, &model)?;
    let db = build_database(database, db_size, db_seed, standardize, &params, &model)?;
    let ev = evaluate_split(&ds, &db, &params, &model)?;
    let summary = summarize(&ev, &thresholds, bins);

    ensure_dir(out)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Internal(format!("cannot serialize metrics: {e}")))?;
    write_file(&out.join("metrics.json"), &format!("{json}\n"))?;
    write_sweep_csv(&out.join("sweep.csv"), &summary.sweep)?;
    write_bins_csv(&out.join("bins.csv"), &summary.reliability_bins)?;
    println!(
        "samples={} accuracy_predict={:.4} median_prototypes={}",
        summary.samples, summary.accuracy_predict, summary.median_prototype_count_95
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    checkpoint: &Path,
    data: &str,
    database: &str,
    out: &Path,
    db_size: Option<usize>,
    db_seed: u64,
    thresholds: Option<&str>,
    standardize: bool,
) -> Result<(), CliError> {
    let thresholds = parse_thresholds(thresholds)?;
    let (params, model) = load_checkpoint(checkpoint)?;
    let ds = load_split(data, SplitTag::Test, standardize, &model)?;
    let db = build_database(database, db_size, db_seed, standardize, &params, &model)?;
    let ev = evaluate_split(&ds, &db, &params, &model)?;
    let points = protoattend::eval::confidence_sweep(&ev.confidences, &ev.correct, &thresholds);
    ensure_dir(out)?;
    write_sweep_csv(&out.join("sweep.csv"), &points)?;
    println!("wrote {} sweep points", points.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ood(
    checkpoint: &Path,
    data: &str,
    database: &str,
    out: &Path,
    ood: Option<&str>,
    noise_seed: u64,
    db_size: Option<usize>,
    db_seed: u64,
    standardize: bool,
) -> Result<(), CliError> {
    let (params, model) = load_checkpoint(checkpoint)?;
    let ds = load_split(data, SplitTag::Test, standardize, &model)?;
    let db = build_database(database, db_size, db_seed, standardize, &params, &model)?;
    let in_conf = score_confidences(&ds.features, &db, &params, &model)?;

    let ood_features: Tensor = match ood {
        Some(spec) => load_split(spec, SplitTag::Test, standardize, &model)?.features,
        None => {
            let mut noise = uniform_noise(ds.len(), model.input_dim, noise_seed);
            if standardize {
                standardize_rows(&mut noise);
            }
            noise
        }
    };
    let ood_conf = score_confidences(&ood_features, &db, &params, &model)?;

    let mut scores = in_conf.clone();
    scores.extend_from_slice(&ood_conf);
    let mut labels = vec![true; in_conf.len()];
    labels.extend(std::iter::repeat(false).take(ood_conf.len()));
    let (auc, points) = roc_auc(&scores, &labels);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure_dir(out)?;
    let report = serde_json::json!({
        "auc": auc,
        "in_samples": in_conf.len(),
        "ood_samples": ood_conf.len(),
        "in_mean_confidence": mean(&in_conf),
        "ood_mean_confidence": mean(&ood_conf),
    });
    write_file(&out.join("ood.json"), &format!("{:#}\n", report))?;
    write_roc_csv(&out.join("roc.csv"), &points)?;
    println!("auc={auc:.4} over {} in-distribution and {} ood samples", in_conf.len(), ood_conf.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prototypes(
    checkpoint: &Path,
    data: &str,
    database: &str,
    out: &Path,
    top: usize,
    limit: usize,
    db_size: Option<usize>,
    db_seed: u64,
    standardize: bool,
) -> Result<(), CliError> {
    if top == 0 {
        return Err(usage("--top must be at least 1".to_string()));
    }
    if limit == 0 {
        return Err(usage("--limit must be at least 1".to_string()));
    }
    let (params, model) = load_checkpoint(checkpoint)?;
    let ds = load_split(data, SplitTag::Test, standardize, &model)?;
    if ds.is_empty() {
        return Err(CliError::from(EvalError::EmptySplit));
    }
    let db = build_database(database, db_size, db_seed, standardize, &params, &model)?;
    if db.is_empty() {
        return Err(CliError::from(EvalError::EmptyDatabase));
    }
    ensure_dir(out)?;
    let count = limit.min(ds.len());
    for i in 0..count {
        let report = predict(ds.features.row(i), &db, &params, &model, top)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        export_prototypes(out, i, &report)?;
    }
    println!("wrote prototype files for {count} inputs to {}", out.display());
    Ok(())
}

fn cmd_noise_bench(config_path: Option<&Path>, ratios: &str, out: &Path) -> Result<(), CliError> {
    let ratio_values: Vec<f64> = ratios
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| usage(format!("noise ratio '{p}' is not a number"))))
        .collect::<Result<_, _>>()?;
    if ratio_values.is_empty() {
        return Err(usage("ratio list is empty".to_string()));
    }
    for &r in &ratio_values {
        if !(0.0..1.0).contains(&r) {
            return Err(usage(format!("noise ratio {r} must lie in [0, 1)")));
        }
    }

    let rc = load_config(config_path)?;
    let (train_all, test) = load_source(&rc)?;
    let (train_set, valid) = train_all.split_tail(rc.data.valid_fraction);
    let model = rc.resolved_model(train_set.dim(), train_all.num_classes)?;
    if test.is_empty() {
        return Err(usage("noise benchmarking needs a non-empty test split".to_string()));
    }

    // the attention-free baseline: same trunk and heads, but the decision
    // reads each input's own value row and no regularizers apply
    let mut baseline_model = model.clone();
    baseline_model.objective = protoattend::ObjectiveVariant::AlphaZero;
    baseline_model.alpha_predict = 0.0;
    baseline_model.lambda_sparse = 0.0;
    baseline_model.lambda_conf = 0.0;

    ensure_dir(out)?;
    let csv_path = out.join("noise_bench.csv");
    let mut rows: Vec<String> = Vec::new();
    let mut cell: u64 = 0;
    for &ratio in &ratio_values {
        for (method, cell_model) in [("baseline", &baseline_model), ("protoattend", &model)] {
            let mut settings = rc.train.clone();
            settings.seed = rc.train.seed.wrapping_add(cell);
            settings.noise_ratio = 0.0;
            cell += 1;

            // corrupt the training copy here so the same noisy labels can
            // also serve as the evaluation database
            let mut noisy = train_set.clone();
            if ratio > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(3));
                inject_label_noise(&mut rng, &mut noisy.labels, cell_model.num_classes, ratio);
            }

            let status = match train(&noisy, &valid, cell_model, &settings) {
                Ok(outcome) => {
                    let db = eval_database(&noisy, settings.db_infer, settings.seed.wrapping_add(5), &outcome.best_params, cell_model);
                    match evaluate_split(&test, &db, &outcome.best_params, cell_model) {
                        Ok(ev) => Ok(ev.accuracy_predict),
                        Err(e) => Err(e.to_string()),
                    }
                }
                Err(e) => Err(e.to_string()),
            };
            let row = match status {
                Ok(acc) => {
                    println!("{method} ratio={ratio} accuracy={acc:.4}");
                    format!("{method},{ratio},{acc},ok")
                }
                Err(message) => {
                    eprintln!("{method} ratio={ratio} failed: {message}");
                    format!("{method},{ratio},,error")
                }
            };
            rows.push(row);
            // rewrite after every cell so partial progress survives a failure
            let mut text = String::from("method,ratio,test_accuracy,status\n");
            for r in &rows {
                text.push_str(r);
                text.push('\n');
            }
            write_file(&csv_path, &text)?;
        }
    }
    Ok(())
}
