//! Run configuration files: `key = value` lines grouped under `[model]`,
//! `[train]`, and `[data]` headers. Full-line `#` comments and blank lines
//! are ignored. Every diagnostic carries the 1-based line number. An empty
//! file yields the documented defaults, which describe a small synthetic
//! run.

use crate::model::ModelConfig;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

/// A config that parsed cleanly but cannot drive the requested run, for
/// example a declared input width that disagrees with the dataset.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct IncompatibleConfig {
    pub message: String,
}

/// Where the training and test splits come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_column: String,
    },
    Synthetic {
        classes: usize,
        dim: usize,
        per_class_train: usize,
        per_class_test: usize,
        spread: f64,
        data_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Rescale each feature row to zero mean and unit variance.
    pub standardize: bool,
    /// Fraction of the training split held out for validation (taken from
    /// the tail after any shuffle the source applies).
    pub valid_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> DataConfig {
        DataConfig {
            source: DataSource::Synthetic {
                classes: 4,
                dim: 16,
                per_class_train: 250,
                per_class_test: 50,
                spread: 0.15,
                data_seed: 99,
            },
            standardize: true,
            valid_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// Candidate database size sampled fresh at every training step.
    pub db_train: usize,
    /// Candidate database size used for evaluation and inference.
    pub db_infer: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Fraction of training labels replaced by a different random class.
    pub noise_ratio: f64,
    /// Keep the current batch out of its own candidate database.
    pub exclude_batch_from_candidates: bool,
    pub eval_every: usize,
}

impl Default for TrainSettings {
    fn default() -> TrainSettings {
        TrainSettings {
            batch_size: 32,
            db_train: 128,
            db_infer: 512,
            iterations: 300,
            learning_rate: 0.002,
            decay_rate: 0.9,
            decay_every: 100,
            clip_norm: 20.0,
            seed: 7,
            noise_ratio: 0.0,
            exclude_batch_from_candidates: true,
            eval_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `input_dim` as written in the file; `None` means infer from data.
    pub explicit_input_dim: Option<usize>,
    /// `num_classes` as written in the file; `None` means infer from data.
    pub explicit_num_classes: Option<usize>,
    pub train: TrainSettings,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            model: ModelConfig::default(),
            explicit_input_dim: None,
            explicit_num_classes: None,
            train: TrainSettings::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// Finalize the model shape against a loaded dataset. Explicit values
    /// must agree with the data; unspecified ones are inferred from it. The
    /// declared class count may exceed the observed one so that classes
    /// absent from a small training split stay representable.
    pub fn resolved_model(&self, data_dim: usize, data_classes: usize) -> Result<ModelConfig, IncompatibleConfig> {
        let mut model = self.model.clone();
        match self.explicit_input_dim {
            Some(d) if d != data_dim => {
                return Err(IncompatibleConfig {
                    message: format!("config declares input_dim = {d} but the data has {data_dim} features per sample"),
                });
            }
            Some(d) => model.input_dim = d,
            None => model.input_dim = data_dim,
        }
        match self.explicit_num_classes {
            Some(c) if c < data_classes => {
                return Err(IncompatibleConfig {
                    message: format!("config declares num_classes = {c} but the data contains labels up to {}", data_classes - 1),
                });
            }
            Some(c) => model.num_classes = c,
            None => model.num_classes = data_classes,
        }
        model.validate().map_err(|message| IncompatibleConfig { message })?;
        Ok(model)
    }
}

struct Entry {
    line: usize,
    value: String,
}

struct SectionEntries {
    name: &'static str,
    entries: HashMap<String, Entry>,
}

impl SectionEntries {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }
}

struct Parser<'a> {
    path: &'a Path,
}

impl<'a> Parser<'a> {
    fn fail<T>(&self, line: usize, message: String) -> Result<T, ConfigError> {
        Err(ConfigError::Parse { path: self.path.to_path_buf(), line, message })
    }

    fn usize_at_least(&self, key: &str, e: &Entry, min: usize) -> Result<usize, ConfigError> {
        let v: usize = match e.value.parse() {
            Ok(v) => v,
            Err(_) => return self.fail(e.line, format!("{key} = '{}' is not a non-negative integer", e.value)),
        };
        if v < min {
            return self.fail(e.line, format!("{key} must be at least {min}, got {v}"));
        }
        Ok(v)
    }

    fn u64_value(&self, key: &str, e: &Entry) -> Result<u64, ConfigError> {
        match e.value.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.fail(e.line, format!("{key} = '{}' is not a non-negative integer", e.value)),
        }
    }

    fn f64_in(&self, key: &str, e: &Entry, lo: f64, hi: f64, hi_open: bool) -> Result<f64, ConfigError> {
        let v: f64 = match e.value.parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => return self.fail(e.line, format!("{key} = '{}' is not a finite number", e.value)),
        };
        let hi_ok = if hi_open { v < hi } else { v <= hi };
        if v < lo || !hi_ok {
            let bracket = if hi_open { ")" } else { "]" };
            return self.fail(e.line, format!("{key} must lie in [{lo}, {hi}{bracket}, got {v}"));
        }
        Ok(v)
    }

    fn f64_positive(&self, key: &str, e: &Entry) -> Result<f64, ConfigError> {
        let v: f64 = match e.value.parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => return self.fail(e.line, format!("{key} = '{}' is not a finite number", e.value)),
        };
        if v <= 0.0 {
            return self.fail(e.line, format!("{key} must be positive, got {v}"));
        }
        Ok(v)
    }

    fn bool_value(&self, key: &str, e: &Entry) -> Result<bool, ConfigError> {
        match e.value.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => self.fail(e.line, format!("{key} = '{other}' must be true or false")),
        }
    }

    fn path_value(&self, e: Entry) -> PathBuf {
        PathBuf::from(e.value)
    }

    fn dims_list(&self, key: &str, e: &Entry) -> Result<Vec<usize>, ConfigError> {
        if e.value == "none" {
            return Ok(Vec::new());
        }
        e.value
            .split(',')
            .map(|part| {
                let part = part.trim();
                match part.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v),
                    _ => self.fail(e.line, format!("{key} entry '{part}' is not a positive integer")),
                }
            })
            .collect()
    }

    fn reject_leftovers(&self, section: &SectionEntries) -> Result<(), ConfigError> {
        if let Some((key, entry)) = section.entries.iter().min_by_key(|(_, e)| e.line) {
            return self.fail(entry.line, format!("unknown key '{key}' in [{}]", section.name));
        }
        Ok(())
    }
}

fn split_sections(path: &Path, text: &str) -> Result<[SectionEntries; 3], ConfigError> {
    let mut sections = [
        SectionEntries { name: "model", entries: HashMap::new() },
        SectionEntries { name: "train", entries: HashMap::new() },
        SectionEntries { name: "data", entries: HashMap::new() },
    ];
    let parse_err = |line: usize, message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            current = Some(match line {
                "[model]" => 0,
                "[train]" => 1,
                "[data]" => 2,
                other => {
                    return Err(parse_err(
                        line_no,
                        format!("unknown section {other} (expected [model], [train], or [data])"),
                    ))
                }
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(parse_err(line_no, format!("expected 'key = value', got '{line}'")));
        }
        let Some(section) = current else {
            return Err(parse_err(
                line_no,
                format!("key '{key}' appears before any section header"),
            ));
        };
        let entries = &mut sections[section].entries;
        if let Some(previous) = entries.get(key) {
            return Err(parse_err(
                line_no,
                format!("duplicate key '{key}' (first set on line {})", previous.line),
            ));
        }
        entries.insert(key.to_string(), Entry { line: line_no, value: value.to_string() });
    }
    Ok(sections)
}

/// Parse configuration text. `path` is only used in diagnostics.
pub fn parse_run_config(path: &Path, text: &str) -> Result<RunConfig, ConfigError> {
    let [mut model_sec, mut train_sec, mut data_sec] = split_sections(path, text)?;
    let p = Parser { path };
    let mut rc = RunConfig::default();

    if let Some(e) = model_sec.take("input_dim") {
        rc.explicit_input_dim = Some(p.usize_at_least("input_dim", &e, 1)?);
        rc.model.input_dim = rc.explicit_input_dim.unwrap();
    }
    if let Some(e) = model_sec.take("num_classes") {
        rc.explicit_num_classes = Some(p.usize_at_least("num_classes", &e, 2)?);
        rc.model.num_classes = rc.explicit_num_classes.unwrap();
    }
    if let Some(e) = model_sec.take("hidden_dims") {
        rc.model.encoder_hidden_dims = p.dims_list("hidden_dims", &e)?;
    }
    if let Some(e) = model_sec.take("d_att") {
        rc.model.d_att = p.usize_at_least("d_att", &e, 1)?;
    }
    if let Some(e) = model_sec.take("d_out") {
        rc.model.d_out = p.usize_at_least("d_out", &e, 1)?;
    }
    if let Some(e) = model_sec.take("normalization") {
        rc.model.normalization = match e.value.parse() {
            Ok(n) => n,
            Err(message) => return p.fail(e.line, message),
        };
    }
    if let Some(e) = model_sec.take("alpha_predict") {
        rc.model.alpha_predict = p.f64_in("alpha_predict", &e, 0.0, 1.0, false)?;
    }
    if let Some(e) = model_sec.take("lambda_sparse") {
        rc.model.lambda_sparse = p.f64_in("lambda_sparse", &e, 0.0, f64::INFINITY, true)?;
    }
    if let Some(e) = model_sec.take("lambda_conf") {
        rc.model.lambda_conf = p.f64_in("lambda_conf", &e, 0.0, f64::INFINITY, true)?;
    }
    if let Some(e) = model_sec.take("objective") {
        rc.model.objective = match e.value.parse() {
            Ok(o) => o,
            Err(message) => return p.fail(e.line, message),
        };
    }
    p.reject_leftovers(&model_sec)?;

    if let Some(e) = train_sec.take("batch_size") {
        rc.train.batch_size = p.usize_at_least("batch_size", &e, 1)?;
    }
    if let Some(e) = train_sec.take("db_train") {
        rc.train.db_train = p.usize_at_least("db_train", &e, 1)?;
    }
    if let Some(e) = train_sec.take("db_infer") {
        rc.train.db_infer = p.usize_at_least("db_infer", &e, 1)?;
    }
    if let Some(e) = train_sec.take("iterations") {
        rc.train.iterations = p.usize_at_least("iterations", &e, 1)?;
    }
    if let Some(e) = train_sec.take("learning_rate") {
        rc.train.learning_rate = p.f64_positive("learning_rate", &e)?;
    }
    if let Some(e) = train_sec.take("decay_rate") {
        let rate = p.f64_positive("decay_rate", &e)?;
        if rate > 1.0 {
            return p.fail(e.line, format!("decay_rate must lie in (0, 1], got {rate}"));
        }
        rc.train.decay_rate = rate;
    }
    if let Some(e) = train_sec.take("decay_every") {
        rc.train.decay_every = p.usize_at_least("decay_every", &e, 1)?;
    }
    if let Some(e) = train_sec.take("clip_norm") {
        rc.train.clip_norm = p.f64_positive("clip_norm", &e)?;
    }
    if let Some(e) = train_sec.take("seed") {
        rc.train.seed = p.u64_value("seed", &e)?;
    }
    if let Some(e) = train_sec.take("noise_ratio") {
        rc.train.noise_ratio = p.f64_in("noise_ratio", &e, 0.0, 1.0, true)?;
    }
    if let Some(e) = train_sec.take("exclude_batch_from_candidates") {
        rc.train.exclude_batch_from_candidates = p.bool_value("exclude_batch_from_candidates", &e)?;
    }
    if let Some(e) = train_sec.take("eval_every") {
        rc.train.eval_every = p.usize_at_least("eval_every", &e, 1)?;
    }
    p.reject_leftovers(&train_sec)?;

    if let Some(e) = data_sec.take("standardize") {
        rc.data.standardize = p.bool_value("standardize", &e)?;
    }
    if let Some(e) = data_sec.take("valid_fraction") {
        rc.data.valid_fraction = p.f64_in("valid_fraction", &e, 0.0, 1.0, true)?;
    }
    let (source_kind, source_line) = match data_sec.take("source") {
        Some(e) => match e.value.as_str() {
            "synthetic" | "idx" | "csv" => (e.value.clone(), e.line),
            other => {
                return p.fail(e.line, format!("unknown source '{other}' (expected synthetic, idx, or csv)"))
            }
        },
        None => ("synthetic".to_string(), 1),
    };
    rc.data.source = match source_kind.as_str() {
        "idx" => {
            let mut need = |key: &str| -> Result<PathBuf, ConfigError> {
                match data_sec.take(key) {
                    Some(e) => Ok(p.path_value(e)),
                    None => p.fail(source_line, format!("source = idx requires the key '{key}' in [data]")),
                }
            };
            DataSource::Idx {
                train_images: need("train_images")?,
                train_labels: need("train_labels")?,
                test_images: need("test_images")?,
                test_labels: need("test_labels")?,
            }
        }
        "csv" => {
            let mut need = |key: &str| -> Result<PathBuf, ConfigError> {
                match data_sec.take(key) {
                    Some(e) => Ok(p.path_value(e)),
                    None => p.fail(source_line, format!("source = csv requires the key '{key}' in [data]")),
                }
            };
            let train = need("train")?;
            let test = need("test")?;
            let label_column = match data_sec.take("label_column") {
                Some(e) => e.value,
                None => "label".to_string(),
            };
            DataSource::Csv { train, test, label_column }
        }
        _ => {
            let defaults = match DataConfig::default().source {
                DataSource::Synthetic { classes, dim, per_class_train, per_class_test, spread, data_seed } => {
                    (classes, dim, per_class_train, per_class_test, spread, data_seed)
                }
                _ => unreachable!(),
            };
            let classes = match data_sec.take("classes") {
                Some(e) => p.usize_at_least("classes", &e, 2)?,
                None => defaults.0,
            };
            let dim = match data_sec.take("dim") {
                Some(e) => p.usize_at_least("dim", &e, 1)?,
                None => defaults.1,
            };
            let per_class_train = match data_sec.take("per_class_train") {
                Some(e) => p.usize_at_least("per_class_train", &e, 1)?,
                None => defaults.2,
            };
            let per_class_test = match data_sec.take("per_class_test") {
                Some(e) => p.usize_at_least("per_class_test", &e, 1)?,
                None => defaults.3,
            };
            let spread = match data_sec.take("spread") {
                Some(e) => p.f64_in("spread", &e, 0.0, f64::INFINITY, true)?,
                None => defaults.4,
            };
            let data_seed = match data_sec.take("data_seed") {
                Some(e) => p.u64_value("data_seed", &e)?,
                None => defaults.5,
            };
            DataSource::Synthetic { classes, dim, per_class_train, per_class_test, spread, data_seed }
        }
    };
    if let Some((key, entry)) = data_sec.entries.iter().min_by_key(|(_, e)| e.line) {
        return p.fail(
            entry.line,
            format!("key '{key}' does not apply when source = {source_kind}"),
        );
    }

    Ok(rc)
}

/// Read and parse a configuration file.
pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_run_config(path, &text)
}

/// Render a fully resolved model shape as a `[model]` section that
/// `parse_run_config` reads back unchanged. Floats use the shortest
/// round-tripping decimal form.
pub fn model_section_text(model: &ModelConfig) -> String {
    let dims = if model.encoder_hidden_dims.is_empty() {
        "none".to_string()
    } else {
        model
            .encoder_hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "[model]\ninput_dim = {}\nhidden_dims = {}\nnum_classes = {}\nd_att = {}\nd_out = {}\nnormalization = {}\nalpha_predict = {}\nlambda_sparse = {}\nlambda_conf = {}\nobjective = {}\n",
        model.input_dim,
        dims,
        model.num_classes,
        model.d_att,
        model.d_out,
        model.normalization.as_str(),
        model.alpha_predict,
        model.lambda_sparse,
        model.lambda_conf,
        model.objective.as_str(),
    )
}
