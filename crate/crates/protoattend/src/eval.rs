//! Evaluation: accuracy at both mixing endpoints, confidence statistics,
//! reliability bins, confidence-threshold sweeps, ROC curves, and prototype
//! counts. Row-level work fans out over scoped threads; the
//! PROTOATTEND_THREADS environment variable caps the fan-out.

use crate::data::{DataError, Dataset};
use crate::database::CandidateDatabase;
use crate::model::{
    argmax, confidence_conformity, decide, encode, mix_values, relational_attention,
    AttentionMatrix, ModelConfig, ModelError, ModelParameters, PredictionReport,
};
use crate::tensor::Tensor;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptySplit,
    #[error("candidate database is empty")]
    EmptyDatabase,
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Worker-thread cap for evaluation. Reads PROTOATTEND_THREADS; anything
/// that is not a positive integer falls back to the machine's available
/// parallelism.
pub fn thread_cap() -> usize {
    match std::env::var("PROTOATTEND_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => t,
            _ => default_threads(),
        },
        Err(_) => default_threads(),
    }
}

/// Split `0..n` into contiguous chunks, run `worker` on each from its own
/// thread, and concatenate the results in order. Row results never depend
/// on the chunking, so any thread count produces identical output.
pub(crate) fn parallel_chunks<T, F>(n: usize, threads: usize, worker: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Vec<T> + Sync,
{
    assert!(threads >= 1, "need at least one worker thread");
    if n == 0 {
        return Vec::new();
    }
    let threads = threads.min(n);
    if threads == 1 {
        return worker(0..n);
    }
    let chunk = (n + threads - 1) / threads;
    let mut parts: Vec<Vec<T>> = Vec::new();
    std::thread::scope(|s| {
        let mut handles = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let w = &worker;
            handles.push(s.spawn(move || w(start..end)));
            start = end;
        }
        parts = handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect();
    });
    parts.into_iter().flatten().collect()
}

struct RowResult {
    pred_alpha0: usize,
    pred_alpha1: usize,
    pred: usize,
    confidence: f64,
    attention_row: Vec<f64>,
}

fn forward_rows(
    features: &Tensor,
    db: &CandidateDatabase,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<Vec<RowResult>, EvalError> {
    if features.rows() == 0 {
        return Err(EvalError::EmptySplit);
    }
    if db.is_empty() {
        return Err(EvalError::EmptyDatabase);
    }
    let (keys, values) = db.keys_values(params, config)?;
    let dim = features.cols();
    Ok(parallel_chunks(features.rows(), thread_cap(), |range| {
        let chunk = Tensor::new(
            vec![range.len(), dim],
            features.data[range.start * dim..range.end * dim].to_vec(),
        );
        let enc = encode(&chunk, params, config);
        let p = relational_attention(&enc.queries, &keys, config.normalization);
        let l0 = decide(&mix_values(&enc.values, &values, &p, 0.0), &params.decision);
        let l1 = decide(&mix_values(&enc.values, &values, &p, 1.0), &params.decision);
        let lp = decide(&mix_values(&enc.values, &values, &p, config.alpha_predict), &params.decision);
        (0..range.len())
            .map(|r| {
                let pred = argmax(lp.row(r));
                RowResult {
                    pred_alpha0: argmax(l0.row(r)),
                    pred_alpha1: argmax(l1.row(r)),
                    pred,
                    confidence: confidence_conformity(p.row(r), db.labels(), pred),
                    attention_row: p.row(r).to_vec(),
                }
            })
            .collect()
    }))
}

#[derive(Clone, Debug)]
pub struct SplitEvaluation {
    /// Accuracy when deciding from each input's own value row.
    pub accuracy_alpha0: f64,
    /// Accuracy when deciding purely from the attention-weighted candidates.
    pub accuracy_alpha1: f64,
    /// Accuracy at the model's configured prediction mix.
    pub accuracy_predict: f64,
    /// Predicted class per row at the configured prediction mix.
    pub predictions: Vec<usize>,
    pub correct: Vec<bool>,
    pub confidences: Vec<f64>,
    /// Attention over the candidate database, one simplex row per input.
    pub attention: AttentionMatrix,
}

/// Run a labelled split against a candidate database.
pub fn evaluate_split(
    data: &Dataset,
    db: &CandidateDatabase,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<SplitEvaluation, EvalError> {
    let rows = forward_rows(&data.features, db, params, config)?;
    let n = rows.len();
    let mut predictions = Vec::with_capacity(n);
    let mut correct = Vec::with_capacity(n);
    let mut confidences = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n * db.len());
    let mut hits0 = 0usize;
    let mut hits1 = 0usize;
    let mut hits = 0usize;
    for (i, row) in rows.into_iter().enumerate() {
        hits0 += usize::from(row.pred_alpha0 == data.labels[i]);
        hits1 += usize::from(row.pred_alpha1 == data.labels[i]);
        hits += usize::from(row.pred == data.labels[i]);
        correct.push(row.pred == data.labels[i]);
        predictions.push(row.pred);
        confidences.push(row.confidence);
        attention.extend(row.attention_row);
    }
    Ok(SplitEvaluation {
        accuracy_alpha0: hits0 as f64 / n as f64,
        accuracy_alpha1: hits1 as f64 / n as f64,
        accuracy_predict: hits as f64 / n as f64,
        predictions,
        correct,
        confidences,
        attention: AttentionMatrix::new(Tensor::new(vec![n, db.len()], attention)),
    })
}

/// Confidence per row, without needing labels for the rows themselves.
/// Used for scoring data that may come from outside the training
/// distribution.
pub fn score_confidences(
    features: &Tensor,
    db: &CandidateDatabase,
    params: &ModelParameters,
    config: &ModelConfig,
) -> Result<Vec<f64>, EvalError> {
    Ok(forward_rows(features, db, params, config)?.into_iter().map(|r| r.confidence).collect())
}

/// Smallest number of candidates whose weights cover `fraction` of the
/// total attention mass, counting from the heaviest. Falls back to the full
/// candidate count when the weights never reach the target.
pub fn prototype_count(weights: &[f64], fraction: f64) -> usize {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1], got {fraction}");
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    for (i, w) in sorted.iter().enumerate() {
        cumulative += w;
        if cumulative >= fraction {
            return i + 1;
        }
    }
    weights.len()
}

/// Lower median of per-row prototype counts at the given coverage fraction.
pub fn median_prototype_count(attention: &AttentionMatrix, fraction: f64) -> usize {
    let w = attention.weights();
    assert!(w.rows() > 0, "attention matrix has no rows");
    let mut counts: Vec<usize> = (0..w.rows()).map(|i| prototype_count(w.row(i), fraction)).collect();
    counts.sort_unstable();
    counts[(counts.len() - 1) / 2]
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// None when the bin holds no samples.
    pub accuracy: Option<f64>,
}

/// Bucket confidences into `n_bins` equal-width bins over [0, 1] and report
/// the accuracy inside each. Confidence 1.0 lands in the top bin.
pub fn reliability_bins(confidences: &[f64], correct: &[bool], n_bins: usize) -> Vec<ReliabilityBin> {
    assert_eq!(confidences.len(), correct.len());
    assert!(n_bins >= 1);
    let mut counts = vec![0usize; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let bin = ((c * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[bin] += 1;
        hits[bin] += usize::from(ok);
    }
    (0..n_bins)
        .map(|i| ReliabilityBin {
            lower: i as f64 / n_bins as f64,
            upper: (i + 1) as f64 / n_bins as f64,
            count: counts[i],
            accuracy: (counts[i] > 0).then(|| hits[i] as f64 / counts[i] as f64),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Fraction of all samples whose confidence reaches the threshold.
    pub fraction_predicted: f64,
    /// Accuracy over exactly those samples.
    pub accuracy: f64,
}

/// Accuracy when refusing to predict below each confidence threshold.
/// Thresholds must be strictly ascending; thresholds nothing reaches are
/// omitted from the result.
pub fn confidence_sweep(confidences: &[f64], correct: &[bool], thresholds: &[f64]) -> Vec<SweepPoint> {
    assert_eq!(confidences.len(), correct.len());
    assert!(!confidences.is_empty());
    assert!(
        thresholds.windows(2).all(|w| w[0] < w[1]),
        "thresholds must be strictly ascending"
    );
    let n = confidences.len();
    thresholds
        .iter()
        .filter_map(|&t| {
            let mut kept = 0usize;
            let mut hits = 0usize;
            for (&c, &ok) in confidences.iter().zip(correct) {
                if c >= t {
                    kept += 1;
                    hits += usize::from(ok);
                }
            }
            (kept > 0).then(|| SweepPoint {
                threshold: t,
                fraction_predicted: kept as f64 / n as f64,
                accuracy: hits as f64 / kept as f64,
            })
        })
        .collect()
}

/// Mean confidence over the correctly and the incorrectly predicted
/// samples. An empty group reports 0.
pub fn confidence_split_means(confidences: &[f64], correct: &[bool]) -> (f64, f64) {
    assert_eq!(confidences.len(), correct.len());
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let g = usize::from(ok);
        sums[g] += c;
        counts[g] += 1;
    }
    let mean = |g: usize| if counts[g] > 0 { sums[g] / counts[g] as f64 } else { 0.0 };
    (mean(1), mean(0))
}

/// Area under the ROC curve for `scores`, where positives are expected to
/// score higher, plus the curve itself as (false positive rate, true
/// positive rate) points. Ties contribute half credit.
pub fn roc_auc(scores: &[f64], is_positive: &[bool]) -> (f64, Vec<(f64, f64)>) {
    assert_eq!(scores.len(), is_positive.len());
    let p = is_positive.iter().filter(|&&b| b).count();
    let n = is_positive.len() - p;
    assert!(p > 0 && n > 0, "need both positive and negative samples, got {p} and {n}");

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    let mut prev_score = f64::INFINITY;
    for &i in &order {
        if scores[i] != prev_score {
            area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
            points.push((fp as f64 / n as f64, tp as f64 / p as f64));
            prev_tp = tp;
            prev_fp = fp;
            prev_score = scores[i];
        }
        if is_positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
    points.push((1.0, 1.0));
    points.dedup();
    (area / (p as f64 * n as f64), points)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MetricsSummary {
    pub samples: usize,
    pub accuracy_alpha0: f64,
    pub accuracy_alpha1: f64,
    pub accuracy_predict: f64,
    pub mean_confidence_correct: f64,
    pub mean_confidence_incorrect: f64,
    /// Lower median of prototype counts at 95% attention coverage.
    pub median_prototype_count_95: usize,
    pub reliability_bins: Vec<ReliabilityBin>,
    pub sweep: Vec<SweepPoint>,
}

pub fn summarize(eval: &SplitEvaluation, thresholds: &[f64], n_bins: usize) -> MetricsSummary {
    let (mean_correct, mean_incorrect) = confidence_split_means(&eval.confidences, &eval.correct);
    MetricsSummary {
        samples: eval.predictions.len(),
        accuracy_alpha0: eval.accuracy_alpha0,
        accuracy_alpha1: eval.accuracy_alpha1,
        accuracy_predict: eval.accuracy_predict,
        mean_confidence_correct: mean_correct,
        mean_confidence_incorrect: mean_incorrect,
        median_prototype_count_95: median_prototype_count(&eval.attention, 0.95),
        reliability_bins: reliability_bins(&eval.confidences, &eval.correct, n_bins),
        sweep: confidence_sweep(&eval.confidences, &eval.correct, thresholds),
    }
}

pub const SWEEP_CSV_HEADER: &str = "threshold,fraction_predicted,accuracy";
pub const BINS_CSV_HEADER: &str = "bin_lower,bin_upper,sample_count,mean_accuracy";
pub const ROC_CSV_HEADER: &str = "fpr,tpr";
pub const PROTOTYPES_CSV_HEADER: &str = "input_id,prediction,confidence,candidate_id,candidate_label,weight";

fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<(), DataError> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fraction_predicted, p.accuracy));
    }
    write_text(path, &out)
}

pub fn write_bins_csv(path: &Path, bins: &[ReliabilityBin]) -> Result<(), DataError> {
    let mut out = String::from(BINS_CSV_HEADER);
    out.push('\n');
    for b in bins {
        let acc = b.accuracy.map_or(String::new(), |a| a.to_string());
        out.push_str(&format!("{},{},{},{}\n", b.lower, b.upper, b.count, acc));
    }
    write_text(path, &out)
}

pub fn write_roc_csv(path: &Path, points: &[(f64, f64)]) -> Result<(), DataError> {
    let mut out = String::from(ROC_CSV_HEADER);
    out.push('\n');
    for (fpr, tpr) in points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    write_text(path, &out)
}

/// Write `prototypes_<input_id>.csv` describing one prediction. The
/// candidate id column holds each prototype's row in the dataset the
/// database was sampled from.
pub fn export_prototypes(dir: &Path, input_id: usize, report: &PredictionReport) -> Result<(), DataError> {
    let mut out = String::from(PROTOTYPES_CSV_HEADER);
    out.push('\n');
    for p in &report.prototypes {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            input_id, report.predicted_class, report.confidence, p.source_index, p.label, p.weight
        ));
    }
    write_text(&dir.join(format!("prototypes_{input_id}.csv")), &out)
}
