//! Model checkpoints: a little-endian `u64` dimension followed by the
//! entries as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{AreaError, Result};
use crate::math::ModelVector;

pub fn encode(x: &ModelVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * x.dim());
    out.extend_from_slice(&(x.dim() as u64).to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelVector> {
    let bad = |detail: String| AreaError::Ingest {
        file: "checkpoint".into(),
        field: "payload",
        reason: detail,
    };
    let header: [u8; 8] = bytes
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| bad(format!("{} bytes, header needs 8", bytes.len())))?;
    let dim = u64::from_le_bytes(header) as usize;
    let body = &bytes[8..];
    if dim.checked_mul(8) != Some(body.len()) {
        return Err(bad(format!("dimension {dim} does not match {} payload bytes", body.len())));
    }
    Ok(ModelVector::from_vec(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    ))
}

pub fn write_checkpoint(path: &Path, x: &ModelVector) -> Result<()> {
    fs::write(path, encode(x)).map_err(|e| AreaError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelVector> {
    let bytes = fs::read(path).map_err(|e| AreaError::io(path, e))?;
    decode(&bytes)
}
