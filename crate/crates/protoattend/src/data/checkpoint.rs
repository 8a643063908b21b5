//! Model checkpoints: a self-describing binary file holding the model
//! shape as embedded config text, every parameter tensor by name, and a
//! sha256 fingerprint over the parameters. Integers are little-endian.
//! Saves write a sibling temp file first and rename it into place, so a
//! crash never leaves a half-written checkpoint at the target path.

use super::config::{model_section_text, parse_run_config};
use super::DataError;
use crate::model::{ModelConfig, ModelParameters};
use crate::tensor::Tensor;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PATD";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

fn chk_err(path: &Path, message: String) -> DataError {
    DataError::Checkpoint { path: path.to_path_buf(), message }
}

fn push_tensor(bytes: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    bytes.extend((name.len() as u32).to_le_bytes());
    bytes.extend_from_slice(name.as_bytes());
    bytes.extend((tensor.shape.len() as u32).to_le_bytes());
    for &d in &tensor.shape {
        bytes.extend((d as u32).to_le_bytes());
    }
    for &v in &tensor.data {
        bytes.extend(v.to_le_bytes());
    }
}

/// Serialize parameters and their model shape to `path`, atomically.
pub fn save_checkpoint(path: &Path, params: &ModelParameters, model: &ModelConfig) -> Result<(), DataError> {
    let config_text = model_section_text(model);
    let named = params.named();

    let mut bytes = Vec::new();
    bytes.extend(CHECKPOINT_MAGIC);
    bytes.extend(CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend((config_text.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_text.as_bytes());
    bytes.extend((named.len() as u32).to_le_bytes());
    for (name, tensor) in &named {
        push_tensor(&mut bytes, name, tensor);
    }
    bytes.extend(params.fingerprint());

    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    if let Err(source) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(DataError::Io { path: path.to_path_buf(), source });
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        let available = self.bytes.len() - self.offset;
        if available < n {
            return Err(chk_err(
                self.path,
                format!("truncated: {what} needs {n} bytes at offset {} but {available} remain", self.offset),
            ));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>, DataError> {
        let needed = count
            .checked_mul(8)
            .ok_or_else(|| chk_err(self.path, format!("{what}: element count {count} overflows")))?;
        let raw = self.take(needed, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Read a checkpoint back into parameters and their model shape. The
/// stored fingerprint must match the reloaded parameters.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParameters, ModelConfig), DataError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };

    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(chk_err(path, format!("bad magic bytes {magic:02x?} (expected {CHECKPOINT_MAGIC:02x?})")));
    }
    let version = cur.u32_le("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(chk_err(
            path,
            format!("unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})"),
        ));
    }

    let config_len = cur.u32_le("config length")? as usize;
    let config_raw = cur.take(config_len, "embedded config")?;
    let config_text = std::str::from_utf8(config_raw)
        .map_err(|_| chk_err(path, "embedded config is not valid UTF-8".to_string()))?;
    let run = parse_run_config(Path::new("<embedded config>"), config_text)
        .map_err(|e| chk_err(path, format!("embedded config: {e}")))?;
    let model = run.model;
    model
        .validate()
        .map_err(|m| chk_err(path, format!("embedded config: {m}")))?;

    let tensor_count = cur.u32_le("tensor count")? as usize;
    let mut records: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for i in 0..tensor_count {
        let what = format!("tensor {i} of {tensor_count}");
        let name_len = cur.u32_le(&format!("{what}: name length"))? as usize;
        let name_raw = cur.take(name_len, &format!("{what}: name"))?;
        let name = std::str::from_utf8(name_raw)
            .map_err(|_| chk_err(path, format!("{what}: name is not valid UTF-8")))?
            .to_string();
        let rank = cur.u32_le(&format!("{what}: rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for d in 0..rank {
            let dim = cur.u32_le(&format!("{what}: dimension {d}"))? as usize;
            numel = numel
                .checked_mul(dim)
                .ok_or_else(|| chk_err(path, format!("{what}: element count overflows")))?;
            shape.push(dim);
        }
        let data = cur.f64s(numel, &format!("tensor '{name}' payload"))?;
        if records.insert(name.clone(), (shape, data)).is_some() {
            return Err(chk_err(path, format!("tensor '{name}' appears twice")));
        }
    }

    let stored_fingerprint: [u8; 32] = cur.take(32, "fingerprint")?.try_into().unwrap();
    if cur.offset != bytes.len() {
        return Err(chk_err(
            path,
            format!("{} trailing bytes after the fingerprint", bytes.len() - cur.offset),
        ));
    }

    let mut params = ModelParameters::init(&model, 0);
    for (name, tensor) in params.named_mut() {
        let (shape, data) = records
            .remove(&name)
            .ok_or_else(|| chk_err(path, format!("missing tensor '{name}'")))?;
        if shape != tensor.shape {
            return Err(chk_err(
                path,
                format!("tensor '{name}' has shape {shape:?} but the embedded config implies {:?}", tensor.shape),
            ));
        }
        tensor.data = data;
    }
    if let Some(name) = records.keys().next() {
        return Err(chk_err(path, format!("unexpected tensor '{name}'")));
    }

    if params.fingerprint() != stored_fingerprint {
        return Err(DataError::FingerprintMismatch { path: path.to_path_buf() });
    }
    Ok((params, model))
}
