//! Checkpoint files: magic `CDRK`, a `u32` LE header length, a JSON header,
//! then one `CDR1` matrix block per tensor (vectors are stored as one row).
//!
//! Values are stored as `f32`, so a loaded checkpoint equals the saved
//! parameters rounded to single precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::index::format::{decode_matrix, encode_matrix};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"CDRK";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn save(path: &Path, kind: &str, config: serde_json::Value, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: (*n).to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in tensors {
        let dim = *t.shape().last().unwrap_or(&1);
        let values: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        encode_matrix(&mut bytes, dim, &values)?;
    }
    fsutil::write_atomic(path, &bytes)
}

pub fn load(path: &Path, expected_kind: &str) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let label = path.display().to_string();
    let bad = |msg: String| Error::Parse {
        path: label.clone(),
        line: 0,
        msg,
    };
    let bytes = fsutil::read_bytes(path)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
    if header.kind != expected_kind {
        return Err(bad(format!(
            "checkpoint kind {:?}, expected {:?}",
            header.kind, expected_kind
        )));
    }
    let mut cursor = &bytes[8 + hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let (_, _, values) = decode_matrix(&mut cursor, &label)?;
        let t = Tensor::new(entry.shape.clone(), values.into_iter().map(f64::from).collect())
            .map_err(|e| bad(format!("tensor {}: {e}", entry.name)))?;
        tensors.push(t);
    }
    if !cursor.is_empty() {
        return Err(bad("trailing bytes after tensors".into()));
    }
    Ok((header, tensors))
}
