//! IDX image and label files: big-endian magic plus dimensions, then a flat
//! u8 payload. Pixels load as f64 in [0, 1].

use super::{DataError, Dataset, SplitTag};
use crate::tensor::Tensor;
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32, DataError> {
        if self.bytes.len() < self.offset + 4 {
            return Err(DataError::Idx {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                message: format!("file ends before {what}"),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..self.offset + 4].try_into().unwrap());
        self.offset += 4;
        Ok(v)
    }

    fn payload(&mut self, expected: usize, what: &str) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.offset;
        if available < expected {
            return Err(DataError::Idx {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                message: format!("{what} needs {expected} bytes but only {available} remain"),
            });
        }
        let out = &self.bytes[self.offset..self.offset + expected];
        self.offset += expected;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Load an image/label file pair into a dataset. Class count is inferred as
/// max label + 1.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: SplitTag) -> Result<Dataset, DataError> {
    let image_bytes = read_file(images_path)?;
    let mut r = Reader { bytes: &image_bytes, offset: 0, path: images_path };
    let magic = r.u32_be("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::Idx {
            path: images_path.to_path_buf(),
            offset: 0,
            message: format!("magic 0x{magic:08x} does not match image magic 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let n = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let pixels = r.payload(n * rows * cols, "pixel data")?;

    let label_bytes = read_file(labels_path)?;
    let mut r = Reader { bytes: &label_bytes, offset: 0, path: labels_path };
    let magic = r.u32_be("magic")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::Idx {
            path: labels_path.to_path_buf(),
            offset: 0,
            message: format!("magic 0x{magic:08x} does not match label magic 0x{LABELS_MAGIC:08x}"),
        });
    }
    let n_labels = r.u32_be("label count")? as usize;
    let raw_labels = r.payload(n_labels, "label data")?;

    if n != n_labels {
        return Err(DataError::CountMismatch {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
            image_count: n,
            label_count: n_labels,
        });
    }

    let features: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    Ok(Dataset::new(Tensor::new(vec![n, rows * cols], features), labels, num_classes, split))
}

pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<(), DataError> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel payload does not match dimensions");
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend(IMAGES_MAGIC.to_be_bytes());
    bytes.extend((n as u32).to_be_bytes());
    bytes.extend((rows as u32).to_be_bytes());
    bytes.extend((cols as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend(LABELS_MAGIC.to_be_bytes());
    bytes.extend((labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}
