//! 8-bit binary PGM previews of response maps.

use std::path::Path;

use avfuse_core::Matrix;

use crate::error::Result;

/// Min-max scales `m` to 0..=255; a constant map renders black.
pub fn encode_pgm(m: &Matrix) -> Vec<u8> {
    let vals = m.as_slice();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(vals.iter().map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round() as u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, m: &Matrix) -> Result<()> {
    super::write_atomic(path, &encode_pgm(m))
}
