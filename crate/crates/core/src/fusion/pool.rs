use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_pair, FeatureSequence, Modality};
use crate::dsp::OnsetSet;
use crate::error::{invalid, Result};
use crate::math;

/// `S[t] = zV_t · zA_t`.
pub fn correlation_scores(zv: &FeatureSequence, za: &FeatureSequence) -> Result<Vec<f64>> {
    check_pair(zv, za)?;
    Ok((0..zv.steps()).map(|t| math::dot(zv.row(t), za.row(t))).collect())
}

/// The `k` steps with the largest scores (lower step wins ties), returned in
/// ascending step order.
pub fn top_k_steps(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return invalid(format!("k = {k} outside [1, {}]", scores.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps equal scores in step order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Mean of `concat(video_t, audio_t)` over `steps`; a missing half stays zero.
/// Steps are summed in the order given so that equal step lists give bitwise
/// equal results.
pub(crate) fn mean_concat(
    video: Option<&FeatureSequence>,
    audio: Option<&FeatureSequence>,
    steps: &[usize],
) -> Vec<f64> {
    let d = video.or(audio).map_or(0, FeatureSequence::width);
    let mut out = vec![0.0; 2 * d];
    let (v_half, a_half) = out.split_at_mut(d);
    for &t in steps {
        if let Some(zv) = video {
            math::axpy(1.0, zv.row(t), v_half);
        }
        if let Some(za) = audio {
            math::axpy(1.0, za.row(t), a_half);
        }
    }
    let n = steps.len() as f64;
    for v in &mut out {
        *v /= n;
    }
    out
}

fn all_steps(t: usize) -> Vec<usize> {
    (0..t).collect()
}

/// Temporal average over every step.
pub fn fuse_continuous(zv: &FeatureSequence, za: &FeatureSequence) -> Result<Vec<f64>> {
    check_pair(zv, za)?;
    Ok(mean_concat(Some(zv), Some(za), &all_steps(zv.steps())))
}

/// Average over the `k` most audio-visually correlated steps.
pub fn fuse_instant(zv: &FeatureSequence, za: &FeatureSequence, k: usize) -> Result<Vec<f64>> {
    let scores = correlation_scores(zv, za)?;
    let steps = top_k_steps(&scores, k)?;
    Ok(mean_concat(Some(zv), Some(za), &steps))
}

/// Average over the audio-onset steps; an empty onset set falls back to the
/// continuous average.
pub fn fuse_onset(zv: &FeatureSequence, za: &FeatureSequence, onsets: &OnsetSet) -> Result<Vec<f64>> {
    check_pair(zv, za)?;
    let steps = onset_steps(onsets, zv.steps())?;
    Ok(mean_concat(Some(zv), Some(za), &steps))
}

pub(crate) fn onset_steps(onsets: &OnsetSet, t: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = onsets.indices().iter().find(|&&i| i >= t) {
        return invalid(format!("onset step {bad} outside [0, {t})"));
    }
    Ok(if onsets.is_empty() {
        all_steps(t)
    } else {
        onsets.indices().to_vec()
    })
}

/// Temporal average of one modality with the other half of the fused vector
/// set to zero.
pub fn fuse_unimodal(z: &FeatureSequence, keep: Modality) -> Result<Vec<f64>> {
    if z.modality() != keep {
        return invalid(format!("expected {keep:?} features, got {:?}", z.modality()));
    }
    let steps = all_steps(z.steps());
    Ok(match keep {
        Modality::Video => mean_concat(Some(z), None, &steps),
        Modality::Audio => mean_concat(None, Some(z), &steps),
    })
}
