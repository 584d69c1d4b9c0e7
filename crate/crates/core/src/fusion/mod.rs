//! Event-specific fusion layers.
//!
//! Both modalities are encoded once by shared encoders into aligned `T × D`
//! sequences. Each of the five layers pools the pair into one `2D` vector
//! (video half first, audio half second) and its own linear head maps that to
//! `C` logits.

mod encoder;
mod model;
mod pool;

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Result};
use crate::math::{self, Matrix};

pub use encoder::{Affine, Encoder, EncoderInit};
pub use model::{forward, Forward, ForwardTrace, ModelDims, ModelParams, TensorInfo};
pub use pool::{
    correlation_scores, fuse_continuous, fuse_instant, fuse_onset, fuse_unimodal, top_k_steps,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Video,
    Audio,
}

/// The five event-specific layers, in the fixed order used by every per-layer array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Continuous,
    Instant,
    Onset,
    Visual,
    Audio,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Continuous,
        LayerKind::Instant,
        LayerKind::Onset,
        LayerKind::Visual,
        LayerKind::Audio,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Continuous => "continuous",
            LayerKind::Instant => "instant",
            LayerKind::Onset => "onset",
            LayerKind::Visual => "visual",
            LayerKind::Audio => "audio",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One modality's per-step embeddings, `T` rows by `D` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    modality: Modality,
    values: Matrix,
}

impl FeatureSequence {
    pub fn new(modality: Modality, values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return invalid(format!(
                "feature sequence must be at least 1x1, got {}x{}",
                values.rows(),
                values.cols()
            ));
        }
        Ok(Self { modality, values })
    }

    pub fn zeros(modality: Modality, steps: usize, width: usize) -> Result<Self> {
        Self::new(modality, Matrix::zeros(steps, width))
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }
}

/// Per-layer logits, a `5 × C` matrix in [`LayerKind::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs(Matrix);

impl LayerOutputs {
    pub fn new(logits: Matrix) -> Result<Self> {
        if logits.rows() != LayerKind::COUNT || logits.cols() == 0 {
            return invalid(format!(
                "layer outputs must be 5xC with C >= 1, got {}x{}",
                logits.rows(),
                logits.cols()
            ));
        }
        Ok(Self(logits))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, kind: LayerKind) -> &[f64] {
        self.0.row(kind.index())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// `argmax_j O_ij` for each layer, lowest class index on ties.
    pub fn predictions(&self) -> [usize; 5] {
        LayerKind::ALL.map(|k| math::argmax(self.row(k)).unwrap_or(0))
    }
}

pub(crate) fn check_pair(zv: &FeatureSequence, za: &FeatureSequence) -> Result<()> {
    if zv.modality != Modality::Video || za.modality != Modality::Audio {
        return invalid("expected a (video, audio) sequence pair");
    }
    if zv.steps() != za.steps() || zv.width() != za.width() {
        return invalid(format!(
            "paired sequences differ in shape: video {}x{}, audio {}x{}",
            zv.steps(),
            zv.width(),
            za.steps(),
            za.width()
        ));
    }
    Ok(())
}
