//! Dense matrix files: magic `AVFMTX01`, rows and cols as u64 LE, then
//! row-major f32 LE values.

use std::path::Path;

use avfuse_core::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AVFMTX01";
const HEADER_LEN: usize = 24;

pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    if m.as_slice().iter().any(|v| v.is_nan() || v.abs() > f64::from(f32::MAX)) {
        return Err(Error::format("value outside the f32 range"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("truncated"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8), word(16));
    let len = usize::try_from(rows)
        .ok()
        .zip(usize::try_from(cols).ok())
        .and_then(|(r, c)| r.checked_mul(c))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b.checked_add(HEADER_LEN).is_some()))
        .ok_or_else(|| Error::format("shape overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < 4 * len {
        return Err(Error::format("truncated"));
    }
    if payload.len() > 4 * len {
        return Err(Error::format("trailing bytes after payload"));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Matrix::from_vec(rows as usize, cols as usize, values).map_err(|e| Error::format(e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    super::write_atomic(path, &encode_matrix(m)?)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&super::read_bytes(path)?)
}

/// Rounds every value through `f32`, matching what a file round trip stores.
pub fn quantize(m: &Matrix) -> Matrix {
    let v = m.as_slice().iter().map(|&x| f64::from(x as f32)).collect();
    Matrix::from_vec(m.rows(), m.cols(), v).expect("same shape")
}
