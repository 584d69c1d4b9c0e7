use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::encoder::{Affine, Encoder, EncoderInit};
use super::pool::{self, mean_concat};
use super::{check_pair, FeatureSequence, LayerKind, LayerOutputs, Modality};
use crate::dsp::OnsetSet;
use crate::error::{invalid, Error, Result};
use crate::math::Matrix;
use crate::rng::Rng;

/// Widths of every parameter group plus the instant-layer `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelDims {
    pub video_in: usize,
    pub audio_in: usize,
    pub hidden: Option<usize>,
    pub embed: usize,
    pub classes: usize,
    pub k: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.video_in == 0 || self.audio_in == 0 || self.embed == 0 || self.classes == 0 {
            return invalid("model widths must be positive");
        }
        if self.hidden == Some(0) {
            return invalid("hidden width must be positive");
        }
        if self.k == 0 {
            return invalid("k must be at least 1");
        }
        Ok(())
    }
}

/// Shared encoders and the five unshared heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub video: Encoder,
    pub audio: Encoder,
    pub heads: [Affine; 5],
    pub k: usize,
}

impl ModelParams {
    pub fn new(video: Encoder, audio: Encoder, heads: [Affine; 5], k: usize) -> Result<Self> {
        let p = Self { video, audio, heads, k };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let d = self.video.output_width();
        if self.audio.output_width() != d {
            return invalid(format!(
                "encoder output widths differ: video {d}, audio {}",
                self.audio.output_width()
            ));
        }
        if self.video.hidden_width() != self.audio.hidden_width() {
            return invalid("encoders must share the hidden configuration");
        }
        let c = self.heads[0].outputs();
        for h in &self.heads {
            if h.inputs() != 2 * d || h.outputs() != c {
                return invalid(format!(
                    "head shape {}x{} does not match {c}x{}",
                    h.outputs(),
                    h.inputs(),
                    2 * d
                ));
            }
        }
        self.dims().validate()
    }

    /// Encoders per `init`, heads uniform in `±1/√(2D)`, all biases zero.
    pub fn init(dims: ModelDims, init: EncoderInit, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = Rng::new(seed);
        let video = Encoder::init(dims.video_in, dims.hidden, dims.embed, init, &mut rng)?;
        let audio = Encoder::init(dims.audio_in, dims.hidden, dims.embed, init, &mut rng)?;
        let heads = LayerKind::ALL.map(|_| Affine::uniform(dims.classes, 2 * dims.embed, &mut rng));
        Self::new(video, audio, heads, dims.k)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            video_in: self.video.input_width(),
            audio_in: self.audio.input_width(),
            hidden: self.video.hidden_width(),
            embed: self.video.output_width(),
            classes: self.heads[0].outputs(),
            k: self.k,
        }
    }

    pub fn head(&self, kind: LayerKind) -> &Affine {
        &self.heads[kind.index()]
    }

    /// Same shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|_, v| v.fill(0.0));
        z
    }

    /// Visits every parameter tensor in the canonical order used by
    /// checkpoints and flattening: video encoder, audio encoder, then the five
    /// heads. Each tensor is reported with a dotted name and its shape.
    pub fn for_each_tensor<F: FnMut(TensorInfo, &[f64])>(&self, mut f: F) {
        let mut visit_affine = |prefix: &str, a: &Affine| {
            f(
                TensorInfo::new(format!("{prefix}.weight"), a.outputs(), a.inputs()),
                a.weight.as_slice(),
            );
            f(TensorInfo::new(format!("{prefix}.bias"), a.outputs(), 1), &a.bias);
        };
        for (name, enc) in [("video", &self.video), ("audio", &self.audio)] {
            if let Some(h) = &enc.hidden {
                visit_affine(&format!("{name}.hidden"), h);
            }
            visit_affine(&format!("{name}.output"), &enc.output);
        }
        for kind in LayerKind::ALL {
            visit_affine(&format!("head.{}", kind.name()), &self.heads[kind.index()]);
        }
    }

    pub fn for_each_tensor_mut<F: FnMut(&TensorInfo, &mut [f64])>(&mut self, mut f: F) {
        let mut visit_affine = |prefix: &str, a: &mut Affine| {
            let info = TensorInfo::new(format!("{prefix}.weight"), a.outputs(), a.inputs());
            f(&info, a.weight.as_mut_slice());
            let info = TensorInfo::new(format!("{prefix}.bias"), a.outputs(), 1);
            f(&info, &mut a.bias);
        };
        for (name, enc) in [("video", &mut self.video), ("audio", &mut self.audio)] {
            if let Some(h) = &mut enc.hidden {
                visit_affine(&format!("{name}.hidden"), h);
            }
            visit_affine(&format!("{name}.output"), &mut enc.output);
        }
        for kind in LayerKind::ALL {
            visit_affine(&format!("head.{}", kind.name()), &mut self.heads[kind.index()]);
        }
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        self.for_each_tensor(|info, _| out.push(info));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, v| n += v.len());
        n
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_tensor(|_, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites every parameter from a flat vector in canonical order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite parameter".into()));
        }
        let mut offset = 0;
        self.for_each_tensor_mut(|_, v| {
            v.copy_from_slice(&values[offset..offset + v.len()]);
            offset += v.len();
        });
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.video.is_finite() && self.audio.is_finite() && self.heads.iter().all(Affine::is_finite)
    }
}

/// Name and 2-D shape of one parameter tensor (biases are `n × 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl TensorInfo {
    fn new(name: String, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Logits plus whether the onset layer fell back to continuous pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub outputs: LayerOutputs,
    pub onset_fallback: bool,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub video: FeatureSequence,
    pub audio: FeatureSequence,
    pub(crate) video_hidden: Option<Matrix>,
    pub(crate) audio_hidden: Option<Matrix>,
    /// Fused vectors in layer order.
    pub fused: [Vec<f64>; 5],
    /// Steps pooled by the instant layer, ascending.
    pub instant_steps: Vec<usize>,
    /// Steps pooled by the onset layer (all steps on fallback).
    pub onset_steps: Vec<usize>,
    pub onset_fallback: bool,
    pub outputs: LayerOutputs,
}

impl ForwardTrace {
    pub fn run(
        video_raw: &FeatureSequence,
        audio_raw: &FeatureSequence,
        params: &ModelParams,
        onsets: &OnsetSet,
    ) -> Result<Self> {
        if video_raw.modality() != Modality::Video || audio_raw.modality() != Modality::Audio {
            return invalid("expected a (video, audio) sequence pair");
        }
        if video_raw.steps() != audio_raw.steps() {
            return invalid(format!(
                "video has {} steps, audio has {}",
                video_raw.steps(),
                audio_raw.steps()
            ));
        }
        let (zv, video_hidden) = params.video.encode_traced(video_raw)?;
        let (za, audio_hidden) = params.audio.encode_traced(audio_raw)?;
        check_pair(&zv, &za)?;
        let t = zv.steps();

        let all: Vec<usize> = (0..t).collect();
        let scores = pool::correlation_scores(&zv, &za)?;
        let instant_steps = pool::top_k_steps(&scores, params.k)?;
        let onset_steps = pool::onset_steps(onsets, t)?;
        let fused = [
            mean_concat(Some(&zv), Some(&za), &all),
            mean_concat(Some(&zv), Some(&za), &instant_steps),
            mean_concat(Some(&zv), Some(&za), &onset_steps),
            mean_concat(Some(&zv), None, &all),
            mean_concat(None, Some(&za), &all),
        ];

        let c = params.heads[0].outputs();
        let mut logits = Matrix::zeros(LayerKind::COUNT, c);
        for kind in LayerKind::ALL {
            let row = params.heads[kind.index()].apply(&fused[kind.index()]);
            logits.row_mut(kind.index()).copy_from_slice(&row);
        }
        if !logits.is_finite() {
            return Err(Error::NumericFailure("non-finite logits".into()));
        }
        Ok(Self {
            video: zv,
            audio: za,
            video_hidden,
            audio_hidden,
            fused,
            instant_steps,
            onset_steps,
            onset_fallback: onsets.is_empty(),
            outputs: LayerOutputs::new(logits)?,
        })
    }
}

/// Encodes both modalities once, applies the five poolings and heads.
pub fn forward(
    video_raw: &FeatureSequence,
    audio_raw: &FeatureSequence,
    params: &ModelParams,
    onsets: &OnsetSet,
) -> Result<Forward> {
    let trace = ForwardTrace::run(video_raw, audio_raw, params, onsets)?;
    Ok(Forward {
        outputs: trace.outputs,
        onset_fallback: trace.onset_fallback,
    })
}
