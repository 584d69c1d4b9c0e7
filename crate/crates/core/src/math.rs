//! Dense row-major matrices and the small set of vector kernels the model needs.
//!
//! All arithmetic is `f64`. Transcendental functions go through `libm` so that
//! results are identical on every platform and in every build profile.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Row-major `rows × cols` matrix of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major values, rejecting shape mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite matrix value at index {i}"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-width matrix has no meaningful rows
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// `selfᵀ · y` for `y` of length `rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.iter_rows().zip(y) {
            axpy(yi, row, &mut out);
        }
        out
    }

    /// Adds the outer product `scale · a bᵀ` in place.
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            axpy(scale * ar, b, self.row_mut(r));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return invalid("empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("non-finite vector entry");
    }
    Ok(())
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    check_vector(v)?;
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| libm::exp(x - m)).sum();
    Ok(m + libm::log(s))
}

/// Softmax with max subtraction.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_vector(v)?;
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| libm::exp(x - m)).collect();
    let s: f64 = out.iter().sum();
    for o in &mut out {
        *o /= s;
    }
    Ok(out)
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> Result<usize> {
    check_vector(v)?;
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Central-difference gradient `(f(x+εe_k) − f(x−εe_k)) / 2ε` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return invalid("eps must be positive");
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + eps;
        let hi = f(&probe);
        probe[k] = x[k] - eps;
        let lo = f(&probe);
        probe[k] = x[k];
        if !(hi.is_finite() && lo.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "objective not finite around coordinate {k}"
            )));
        }
        grad.push((hi - lo) / (2.0 * eps));
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error `|a−b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true gradient is zero from turning
/// finite-difference rounding noise into a huge ratio.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
