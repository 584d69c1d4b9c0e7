//! Sound-source heatmaps: per-cell dot products between a visual activation
//! grid and the audio embedding at the same step.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::fusion::FeatureSequence;
use crate::math::{self, Matrix};

/// Activation grids `𝒱_t` of shape `height × width × depth`, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureMap {
    steps: usize,
    height: usize,
    width: usize,
    depth: usize,
    values: Vec<f64>,
}

impl SpatialFeatureMap {
    /// `values` are laid out `[t][h][w][d]`.
    pub fn new(steps: usize, height: usize, width: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        let expected = steps
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .and_then(|n| n.checked_mul(depth));
        if expected != Some(values.len()) || values.is_empty() {
            return invalid(format!(
                "spatial map {steps}x{height}x{width}x{depth} does not match {} values",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite spatial feature");
        }
        Ok(Self { steps, height, width, depth, values })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn cell(&self, t: usize, h: usize, w: usize) -> &[f64] {
        let start = ((t * self.height + h) * self.width + w) * self.depth;
        &self.values[start..start + self.depth]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    /// `α_t`, one `height × width` grid per step.
    pub per_step: Vec<Matrix>,
    /// Mean of `α_t` over the centred window.
    pub averaged: Matrix,
    /// Steps `[start, end)` that were averaged.
    pub window: (usize, usize),
}

/// Centred window of `len` steps around `steps / 2`, clamped to the clip.
pub fn centered_window(steps: usize, len: usize) -> (usize, usize) {
    let len = len.clamp(1, steps);
    let start = (steps / 2).saturating_sub(len / 2).min(steps - len);
    (start, start + len)
}

/// `α_t[h, w] = 𝒱_t[h, w, :] · zA_t`, plus its average over `window` steps
/// centred on the middle step.
pub fn localization_map(vmap: &SpatialFeatureMap, za: &FeatureSequence, window: usize) -> Result<LocalizationMap> {
    if vmap.depth != za.width() {
        return invalid(format!(
            "activation depth {} does not match audio width {}",
            vmap.depth,
            za.width()
        ));
    }
    if vmap.steps != za.steps() {
        return invalid(format!(
            "activation grid has {} steps, audio has {}",
            vmap.steps,
            za.steps()
        ));
    }
    let per_step: Vec<Matrix> = (0..vmap.steps)
        .map(|t| {
            let mut m = Matrix::zeros(vmap.height, vmap.width);
            for h in 0..vmap.height {
                for w in 0..vmap.width {
                    m.set(h, w, math::dot(vmap.cell(t, h, w), za.row(t)));
                }
            }
            m
        })
        .collect();
    let (start, end) = centered_window(vmap.steps, window);
    let mut averaged = Matrix::zeros(vmap.height, vmap.width);
    for m in &per_step[start..end] {
        math::axpy(1.0, m.as_slice(), averaged.as_mut_slice());
    }
    let n = (end - start) as f64;
    averaged.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(LocalizationMap { per_step, averaged, window: (start, end) })
}

/// Half-open rectangle of grid cells: rows `top..bottom`, columns `left..right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl GridBox {
    fn contains(&self, h: usize, w: usize) -> bool {
        (self.top..self.bottom).contains(&h) && (self.left..self.right).contains(&w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationScore {
    /// IoU at threshold 0.5 of the map maximum.
    pub iou: f64,
    /// Mean IoU over thresholds 0.05, 0.10, …, 0.95.
    pub auc: f64,
}

/// IoU between `{cells ≥ τ·max}` and the box. A map with no positive cell
/// activates nothing.
pub fn iou_at(map: &Matrix, gt: &GridBox, tau: f64) -> f64 {
    let max = map.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut inter = 0usize;
    let mut union = 0usize;
    for h in 0..map.rows() {
        for w in 0..map.cols() {
            let on = max > 0.0 && map.get(h, w) >= tau * max;
            let inside = gt.contains(h, w);
            inter += usize::from(on && inside);
            union += usize::from(on || inside);
        }
    }
    inter as f64 / union as f64
}

pub fn localization_eval(map: &Matrix, gt: GridBox) -> Result<LocalizationScore> {
    if gt.top >= gt.bottom || gt.left >= gt.right {
        return invalid("degenerate ground-truth box");
    }
    if gt.bottom > map.rows() || gt.right > map.cols() {
        return invalid(format!(
            "box exceeds the {}x{} grid",
            map.rows(),
            map.cols()
        ));
    }
    let taus = (1..=19).map(|i| i as f64 * 0.05);
    let auc = taus.map(|tau| iou_at(map, &gt, tau)).sum::<f64>() / 19.0;
    Ok(LocalizationScore { iou: iou_at(map, &gt, 0.5), auc })
}
