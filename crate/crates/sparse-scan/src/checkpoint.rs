//! Parameter checkpoints.
//!
//! The data file is every tensor's values as little-endian f64, in visit
//! order. A JSON sidecar at `<path>.json` lists name, shape and element
//! offset for each tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_scan_core::nn::Parameters;

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "sparse-scan-f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the data file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub elements: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn index_of(params: &dyn Parameters) -> CheckpointIndex {
    let mut tensors = Vec::new();
    let mut offset = 0;
    params.visit("", &mut |name, shape, values| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += values.len();
    });
    CheckpointIndex {
        format: FORMAT_TAG.to_string(),
        elements: offset,
        tensors,
    }
}

pub fn save_checkpoint(params: &dyn Parameters, path: &Path) -> Result<()> {
    let mut data = Vec::new();
    params.visit("", &mut |_, _, values| {
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    fs::write(path, data).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&index_of(params))?;
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

/// Overwrites `params` with the checkpoint. Names and shapes must match the
/// model exactly.
pub fn load_checkpoint(params: &mut dyn Parameters, path: &Path) -> Result<()> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let stored: CheckpointIndex = serde_json::from_str(&text)?;
    if stored.format != FORMAT_TAG {
        return Err(Error::Format(format!("unknown checkpoint format {:?}", stored.format)));
    }
    let expected = index_of(params);
    if stored.tensors != expected.tensors {
        let first = stored
            .tensors
            .iter()
            .zip(&expected.tensors)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("stored {} {:?} vs model {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("{} stored tensors vs {} in the model", stored.tensors.len(), expected.tensors.len()));
        return Err(Error::Format(format!("checkpoint does not fit the model: {first}")));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * expected.elements {
        return Err(Error::Format(format!(
            "checkpoint holds {} bytes, the model needs {}",
            bytes.len(),
            8 * expected.elements
        )));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    params.visit_mut("", &mut |_, _, dst| {
        for d in dst.iter_mut() {
            *d = values.next().expect("length checked above");
        }
    });
    Ok(())
}
