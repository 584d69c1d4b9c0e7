//! HTK-style mel scale and triangular filterbank.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Matrix;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Mel-spaced edge frequencies: `n_mels + 2` points from `f_min` to `f_max`.
/// Band `m` rises from edge `m`, peaks at edge `m + 1` and falls to edge `m + 2`.
pub fn mel_edges(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
        .into_iter()
        .map(mel_to_hz)
        .collect()
}

/// Peak frequency of each band.
pub fn mel_centers(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let edges = mel_edges(n_mels, f_min, f_max);
    edges[1..=n_mels].to_vec()
}

/// Filterbank as an `n_freqs × n_mels` matrix of unit-peak triangles, where the
/// FFT bins are spread linearly over `[0, sample_rate / 2]`.
pub fn mel_filterbank(n_freqs: usize, n_mels: usize, f_min: f64, f_max: f64, sample_rate: f64) -> Matrix {
    let freqs = linspace(0.0, sample_rate / 2.0, n_freqs);
    let edges = mel_edges(n_mels, f_min, f_max);
    let mut fb = Matrix::zeros(n_freqs, n_mels);
    for (k, &f) in freqs.iter().enumerate() {
        for m in 0..n_mels {
            let down = (f - edges[m]) / (edges[m + 1] - edges[m]);
            let up = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
            fb.set(k, m, down.min(up).max(0.0));
        }
    }
    fb
}
