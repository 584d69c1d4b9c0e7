//! Log-mel front end and onset detection for 10 s, 16 kHz mono clips.
//!
//! STFT: 512-point FFT, hop 160, periodic Hann window of 320 samples centred in
//! the FFT frame, centred frames with reflect padding. Power spectra go through
//! 80 triangular mel filters spanning 0–8000 Hz and then `ln(power + 1e-10)`.
//! A 160 000-sample clip yields 1001 frames; the last is dropped so the output
//! is exactly 1000 × 80.

mod fft;
pub mod mel;
pub mod onset;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::math::Matrix;
use fft::Fft;

pub use onset::{map_onsets_to_steps, onset_envelope, pick_onsets, OnsetEnvelope, OnsetSet, PeakPicking};

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SECONDS: usize = 10;
pub const CLIP_SAMPLES: usize = SAMPLE_RATE as usize * CLIP_SECONDS;
pub const N_FFT: usize = 512;
pub const HOP_LENGTH: usize = 160;
pub const WIN_LENGTH: usize = 320;
pub const N_MELS: usize = 80;
pub const N_FRAMES: usize = CLIP_SAMPLES / HOP_LENGTH;
pub const LOG_FLOOR: f64 = 1e-10;
/// Spectrogram frames per video step (1000 frames over T = 100 steps).
pub const FRAMES_PER_STEP: usize = 10;

/// Mono PCM clip, fixed to 10 s: shorter input is zero-padded, longer truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl PcmClip {
    pub fn new(mut samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return invalid("non-finite PCM sample");
        }
        samples.resize(CLIP_SAMPLES, 0.0);
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence() -> Self {
        Self {
            samples: vec![0.0; CLIP_SAMPLES],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

/// `frames × 80` natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram(Matrix);

impl LogMelSpectrogram {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() != N_MELS {
            return invalid(format!("expected {N_MELS} mel bands, got {}", values.cols()));
        }
        Ok(Self(values))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n > pad);
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|j| x[n - 2 - j]));
    out
}

/// Power spectrogram, one row of `N_FFT / 2 + 1` bins per centred frame.
pub fn power_spectrogram(samples: &[f64]) -> Matrix {
    let fft = Fft::new(N_FFT);
    let n = fft.len();
    let padded = reflect_pad(samples, n / 2);
    let frames = 1 + (padded.len() - n) / HOP_LENGTH;
    let mut window = vec![0.0; n];
    let offset = (n - WIN_LENGTH) / 2;
    window[offset..offset + WIN_LENGTH].copy_from_slice(&periodic_hann(WIN_LENGTH));

    let bins = n / 2 + 1;
    let mut out = Matrix::zeros(frames, bins);
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for f in 0..frames {
        let start = f * HOP_LENGTH;
        for (j, (r, i)) in re.iter_mut().zip(im.iter_mut()).enumerate() {
            *r = padded[start + j] * window[j];
            *i = 0.0;
        }
        fft.forward(&mut re, &mut im);
        for (k, p) in out.row_mut(f).iter_mut().enumerate() {
            *p = re[k] * re[k] + im[k] * im[k];
        }
    }
    out
}

/// 1000 × 80 log-mel spectrogram of a 10 s clip.
pub fn compute_logmel(clip: &PcmClip) -> Result<LogMelSpectrogram> {
    if clip.sample_rate != SAMPLE_RATE {
        return invalid(format!(
            "sample rate must be {SAMPLE_RATE} Hz, got {}",
            clip.sample_rate
        ));
    }
    let power = power_spectrogram(&clip.samples);
    let fb = mel::mel_filterbank(N_FFT / 2 + 1, N_MELS, 0.0, SAMPLE_RATE as f64 / 2.0, SAMPLE_RATE as f64);
    let frames = power.rows().min(N_FRAMES);
    let mut out = Matrix::zeros(frames, N_MELS);
    for t in 0..frames {
        let spectrum = power.row(t);
        let row = out.row_mut(t);
        for (k, &p) in spectrum.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            crate::math::axpy(p, fb.row(k), row);
        }
        for v in row.iter_mut() {
            *v = libm::log(*v + LOG_FLOOR);
        }
    }
    LogMelSpectrogram::new(out)
}

/// Full onset pipeline: log-mel → spectral flux → peak picking → video steps.
pub fn detect_onset_steps(clip: &PcmClip, steps: usize) -> Result<OnsetSet> {
    let spec = compute_logmel(clip)?;
    let env = onset_envelope(&spec);
    let frames = pick_onsets(&env, &PeakPicking::default());
    map_onsets_to_steps(&frames, FRAMES_PER_STEP, steps)
}
