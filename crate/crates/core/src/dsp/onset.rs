//! Spectral-flux onset strength, peak picking, and mapping onto video steps.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use super::LogMelSpectrogram;

/// Per-frame onset strength; non-negative, one value per spectrogram frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope(Vec<f64>);

impl OnsetEnvelope {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("onset envelope values must be finite and non-negative");
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sorted, duplicate-free video step indices within `[0, steps)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OnsetSet(Vec<usize>);

impl OnsetSet {
    pub fn new(indices: Vec<usize>, steps: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("onset indices must be strictly increasing");
        }
        if indices.last().is_some_and(|&i| i >= steps) {
            return invalid("onset index out of range");
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates before validating the range.
    pub fn from_unsorted(mut indices: Vec<usize>, steps: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, steps)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Spectral flux: `env[0] = 0`, `env[t] = Σ_b max(0, S[t,b] − S[t−1,b])`.
pub fn onset_envelope(spec: &LogMelSpectrogram) -> OnsetEnvelope {
    let m = spec.matrix();
    let mut env = Vec::with_capacity(m.rows());
    if m.rows() > 0 {
        env.push(0.0);
    }
    for t in 1..m.rows() {
        let flux = m
            .row(t)
            .iter()
            .zip(m.row(t - 1))
            .map(|(cur, prev)| (cur - prev).max(0.0))
            .sum();
        env.push(flux);
    }
    OnsetEnvelope(env)
}

/// Peak-picking windows in frames (10 ms each at hop 160).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakPicking {
    pub pre_max: usize,
    pub post_max: usize,
    pub pre_avg: usize,
    pub post_avg: usize,
    pub wait: usize,
    pub delta: f64,
}

impl Default for PeakPicking {
    fn default() -> Self {
        Self {
            pre_max: 30,
            post_max: 30,
            pre_avg: 100,
            post_avg: 100,
            wait: 30,
            delta: 0.07,
        }
    }
}

/// Frames that are a local maximum, exceed the local mean by `delta`, and sit at
/// least `wait` frames after the previously accepted onset. Windows are clipped
/// at the envelope bounds.
pub fn pick_onsets(env: &OnsetEnvelope, params: &PeakPicking) -> Vec<usize> {
    let v = env.values();
    let n = v.len();
    let mut picked: Vec<usize> = Vec::new();
    for t in 0..n {
        if picked.last().is_some_and(|&prev| t < prev + params.wait) {
            continue;
        }
        let lo = t.saturating_sub(params.pre_max);
        let hi = (t + params.post_max).min(n - 1);
        if v[lo..=hi].iter().any(|&x| x > v[t]) {
            continue;
        }
        let lo = t.saturating_sub(params.pre_avg);
        let hi = (t + params.post_avg).min(n - 1);
        let mean = v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        if v[t] >= mean + params.delta {
            picked.push(t);
        }
    }
    picked
}

/// Maps spectrogram frames to video steps: `floor(f / frames_per_step)`,
/// clamped to `steps − 1`, deduplicated.
pub fn map_onsets_to_steps(frames: &[usize], frames_per_step: usize, steps: usize) -> Result<OnsetSet> {
    if frames_per_step == 0 {
        return invalid("frames_per_step must be at least 1");
    }
    if steps == 0 {
        return invalid("step count must be positive");
    }
    let mapped = frames
        .iter()
        .map(|&f| (f / frames_per_step).min(steps - 1))
        .collect();
    OnsetSet::from_unsorted(mapped, steps)
}
