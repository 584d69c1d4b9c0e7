//! Inference-time procedures over per-layer logits.

mod bias;
mod localize;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::fusion::{LayerKind, LayerOutputs};
use crate::math;

pub use bias::{dataset_bias, layer_uniqueness, winning_layer, BiasReport, LayerUniqueness};
pub use localize::{localization_eval, localization_map, GridBox, LocalizationMap, LocalizationScore, SpatialFeatureMap};

/// Confidence of each layer in its own prediction: `softmax(O_i)[p_i]`.
pub fn layer_confidences(outputs: &LayerOutputs) -> [f64; 5] {
    let preds = outputs.predictions();
    LayerKind::ALL.map(|k| {
        math::softmax(outputs.row(k)).map_or(0.0, |p| p[preds[k.index()]])
    })
}

/// Video-level label from the five layer predictions.
///
/// The unique most frequent prediction wins. When several labels tie for the
/// highest count the prediction of the most confident layer is returned, with
/// remaining confidence ties going to the earlier layer.
pub fn majority_vote(outputs: &LayerOutputs) -> usize {
    let preds = outputs.predictions();
    let count = |c: usize| preds.iter().filter(|&&p| p == c).count();
    let best = preds.iter().map(|&p| count(p)).max().unwrap_or(0);
    let mut modes: Vec<usize> = preds.iter().copied().filter(|&p| count(p) == best).collect();
    modes.sort_unstable();
    modes.dedup();
    if modes.len() == 1 {
        return modes[0];
    }
    let conf = layer_confidences(outputs);
    let mut winner = 0;
    for i in 1..LayerKind::COUNT {
        if conf[i] > conf[winner] {
            winner = i;
        }
    }
    preds[winner]
}

/// One accepted label of a multi-label prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSource {
    pub label: usize,
    pub layer: LayerKind,
    pub confidence: f64,
}

/// Multi-label prediction set; between one and five labels, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    sources: Vec<LabelSource>,
}

impl PredictionSet {
    pub fn labels(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.label).collect()
    }

    pub fn sources(&self) -> &[LabelSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Keeps layer `i`'s prediction `p_i` only when `O_{i,p_i}` is the largest
/// logit at class `p_i` across all layers (earlier layer on ties).
pub fn multilabel_set(outputs: &LayerOutputs) -> PredictionSet {
    let preds = outputs.predictions();
    let conf = layer_confidences(outputs);
    let m = outputs.matrix();
    let mut sources: Vec<LabelSource> = Vec::new();
    for kind in LayerKind::ALL {
        let i = kind.index();
        let p = preds[i];
        let column: Vec<f64> = (0..LayerKind::COUNT).map(|l| m.get(l, p)).collect();
        if math::argmax(&column).ok() == Some(i) && !sources.iter().any(|s| s.label == p) {
            sources.push(LabelSource { label: p, layer: kind, confidence: conf[i] });
        }
    }
    sources.sort_by_key(|s| s.label);
    PredictionSet { sources }
}

fn dedup_sorted(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Per-sample F1, `2|P ∩ G| / (|P| + |G|)`.
pub fn f1_multilabel(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return invalid("ground-truth label set is empty");
    }
    let p = dedup_sorted(pred);
    let g = dedup_sorted(truth);
    let hit = p.iter().filter(|x| g.binary_search(x).is_ok()).count();
    Ok(2.0 * hit as f64 / (p.len() + g.len()) as f64)
}

/// Mean per-sample F1 over paired prediction and truth sets.
pub fn mean_f1(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return invalid("no samples");
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += f1_multilabel(p, g)?;
    }
    Ok(total / pairs.len() as f64)
}

/// `softmax(O_i)[y]` for each layer.
pub fn modality_confidences(outputs: &LayerOutputs, y: usize) -> Result<[f64; 5]> {
    if y >= outputs.classes() {
        return invalid(format!("label {y} outside [0, {})", outputs.classes()));
    }
    let mut out = [0.0; 5];
    for kind in LayerKind::ALL {
        out[kind.index()] = math::softmax(outputs.row(kind))?[y];
    }
    Ok(out)
}
