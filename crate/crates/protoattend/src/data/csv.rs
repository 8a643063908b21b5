//! Comma-separated datasets: one header row naming columns, one row per
//! sample. The label column is selected by name; every other column is a
//! feature, kept in header order. Diagnostics carry 1-based line numbers.

use super::{DataError, Dataset, SplitTag};
use crate::tensor::Tensor;
use std::path::Path;

fn err(path: &Path, line: usize, message: String) -> DataError {
    DataError::Csv { path: path.to_path_buf(), line, message }
}

/// Load a CSV file. Blank lines are skipped but still counted for
/// diagnostics. Labels must be non-negative integers; the class count is
/// inferred as max label + 1.
pub fn load_csv(path: &Path, label_column: &str, split: SplitTag) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header_line, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| err(path, 1, "file has no header row".to_string()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_index = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| err(path, header_line, format!("no column named '{label_column}' in header")))?;
    let dim = columns.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(err(
                path,
                line_no,
                format!("expected {} fields but found {}", columns.len(), fields.len()),
            ));
        }
        for (i, field) in fields.iter().enumerate() {
            if i == label_index {
                let label: i64 = field.parse().map_err(|_| {
                    err(path, line_no, format!("label '{field}' is not an integer"))
                })?;
                if label < 0 {
                    return Err(err(path, line_no, format!("label {label} is negative")));
                }
                labels.push(label as usize);
            } else {
                let value: f64 = field.parse().map_err(|_| {
                    err(path, line_no, format!("field '{field}' in column '{}' is not a number", columns[i]))
                })?;
                features.push(value);
            }
        }
    }

    if labels.is_empty() {
        return Err(err(path, header_line, "file has a header but no data rows".to_string()));
    }
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    Ok(Dataset::new(Tensor::new(vec![n, dim], features), labels, num_classes, split))
}
