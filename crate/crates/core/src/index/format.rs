//! `CDR1` binary embedding matrices.
//!
//! Layout: magic `CDR1`, `u32` LE dim, `u64` LE row count, then count × dim
//! IEEE-754 `f32` LE values in row-major order. Doc ids live in a sidecar text
//! file, one per line in row order.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"CDR1";

/// Appends one matrix block to `out`.
pub fn encode_matrix(out: &mut Vec<u8>, dim: usize, values: &[f32]) -> Result<()> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidArgument(format!("dim {dim} too large")))?;
    if (dim == 0 && !values.is_empty()) || (dim > 0 && !values.len().is_multiple_of(dim)) {
        return Err(Error::Shape(format!(
            "{} values do not fill rows of {}",
            values.len(),
            dim
        )));
    }
    let count = values.len().checked_div(dim).unwrap_or(0) as u64;
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Reads one matrix block, returning (dim, count, values).
pub fn decode_matrix<R: Read>(r: &mut R, label: &str) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |msg: String| Error::Parse {
        path: label.to_string(),
        line: 0,
        msg,
    };
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic, expected CDR1".into()));
    }
    let dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap());
    let count = usize::try_from(count).map_err(|_| bad("row count overflows".into()))?;
    let n = dim
        .checked_mul(count)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("matrix size overflows".into()))?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated body ({count} x {dim}): {e}")))?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, count, values))
}

pub fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Writes the matrix file and its `.ids` sidecar.
pub fn write_embeddings(path: &Path, doc_ids: &[String], dim: usize, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + values.len() * 4);
    encode_matrix(&mut bytes, dim, values)?;
    let mut ids = String::new();
    for id in doc_ids {
        ids.push_str(id);
        ids.push('\n');
    }
    fsutil::write_atomic(path, &bytes)?;
    fsutil::write_atomic_str(&ids_sidecar(path), &ids)
}

/// Reads the matrix file and its `.ids` sidecar.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, usize, Vec<f32>)> {
    let bytes = fsutil::read_bytes(path)?;
    let label = path.display().to_string();
    let mut cursor = bytes.as_slice();
    let (dim, count, values) = decode_matrix(&mut cursor, &label)?;
    if !cursor.is_empty() {
        return Err(Error::parse(label, 0, "trailing bytes after matrix"));
    }
    let side = ids_sidecar(path);
    let ids: Vec<String> = fsutil::read_to_string(&side)?.lines().map(str::to_string).collect();
    if ids.len() != count {
        return Err(Error::parse(
            side.display().to_string(),
            0,
            format!("{} ids for {} rows", ids.len(), count),
        ));
    }
    Ok((ids, dim, values))
}

pub fn write_block<W: Write>(w: &mut W, dim: usize, values: &[f32]) -> Result<()> {
    let mut buf = Vec::new();
    encode_matrix(&mut buf, dim, values)?;
    w.write_all(&buf).map_err(|e| Error::io("<stream>", e))
}
