//! Joint multi-task training of the shared encoders and the five heads.
//!
//! The objective is the weighted sum of per-layer cross entropies, averaged
//! over the batch. Gradients are analytic; the instant-layer top-k set and the
//! onset set are constants of each forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::analysis::majority_vote;
use crate::dsp::OnsetSet;
use crate::error::{invalid, Error, Result};
use crate::fusion::{Affine, Encoder, EncoderInit, FeatureSequence, ForwardTrace, LayerKind, ModelDims, ModelParams};
use crate::math::{self, Matrix};
use crate::rng::{derive_seed, Rng};

/// One labelled audio-visual clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub video: FeatureSequence,
    pub audio: FeatureSequence,
    pub label: usize,
    pub multi_labels: Option<Vec<usize>>,
    pub onsets: Option<OnsetSet>,
    pub pcm_path: Option<String>,
}

impl Sample {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.label >= classes {
            return invalid(format!("sample {}: label {} outside [0, {classes})", self.id, self.label));
        }
        if self.video.steps() != self.audio.steps() {
            return invalid(format!("sample {}: video and audio step counts differ", self.id));
        }
        if let Some(ml) = &self.multi_labels {
            if !ml.contains(&self.label) {
                return invalid(format!("sample {}: multi_labels must contain the label", self.id));
            }
            if ml.iter().any(|&l| l >= classes) {
                return invalid(format!("sample {}: multi-label outside [0, {classes})", self.id));
            }
        }
        if let Some(o) = &self.onsets {
            if o.indices().last().is_some_and(|&i| i >= self.video.steps()) {
                return invalid(format!("sample {}: onset outside the clip", self.id));
            }
        }
        Ok(())
    }

    pub fn onset_set(&self) -> OnsetSet {
        self.onsets.clone().unwrap_or_default()
    }

    pub fn forward(&self, params: &ModelParams) -> Result<ForwardTrace> {
        let onsets = self.onsets.as_ref().map_or_else(OnsetSet::empty, Clone::clone);
        ForwardTrace::run(&self.video, &self.audio, params, &onsets)
    }
}

/// A sample paired with the label used for this step.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub sample: &'a Sample,
    pub label: usize,
}

impl<'a> From<&'a Sample> for Target<'a> {
    fn from(sample: &'a Sample) -> Self {
        Self { sample, label: sample.label }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub k: usize,
    pub loss_weights: [f64; 5],
    /// Shared embedding width `D`.
    pub embed_dim: usize,
    /// Optional rectified hidden layer in both encoders.
    pub hidden_dim: Option<usize>,
    pub encoder_init: InitScheme,
    /// Keep encoders at their initial values and train only the heads.
    pub freeze_encoders: bool,
}

/// Serializable mirror of [`EncoderInit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum InitScheme {
    #[default]
    Uniform,
    Identity,
}

impl From<InitScheme> for EncoderInit {
    fn from(s: InitScheme) -> Self {
        match s {
            InitScheme::Uniform => EncoderInit::Uniform,
            InitScheme::Identity => EncoderInit::Identity,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-2,
            lr_decay: 0.1,
            patience: 3,
            momentum: 0.9,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            k: 10,
            loss_weights: [1.0; 5],
            embed_dim: 16,
            hidden_dim: None,
            encoder_init: InitScheme::Uniform,
            freeze_encoders: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return invalid("lr0 must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return invalid("lr_decay must lie in (0, 1)");
        }
        if self.patience == 0 {
            return invalid("patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if self.k == 0 || self.embed_dim == 0 {
            return invalid("k and embed_dim must be positive");
        }
        if self.loss_weights.iter().any(|w| !w.is_finite()) {
            return invalid("loss weights must be finite");
        }
        Ok(())
    }
}

/// `−ln softmax(logits)[y]` via log-sum-exp.
pub fn cross_entropy_loss(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return invalid(format!("label {y} outside [0, {})", logits.len()));
    }
    let top = math::argmax(logits)?;
    let m = logits[top];
    // ln Σ e^{l−m} = ln(1 + Σ_{j≠top} e^{l_j−m}) keeps tiny losses representable
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &l)| libm::exp(l - m))
        .sum();
    Ok(((m - logits[y]) + libm::log1p(rest)).max(0.0))
}

/// `Σ_i w_i · CE(O_i, y)`.
pub fn multi_task_loss(outputs: &crate::fusion::LayerOutputs, y: usize, weights: &[f64; 5]) -> Result<f64> {
    if weights.iter().any(|w| !w.is_finite()) {
        return invalid("loss weights must be finite");
    }
    let mut total = 0.0;
    for kind in LayerKind::ALL {
        total += weights[kind.index()] * cross_entropy_loss(outputs.row(kind), y)?;
    }
    Ok(total)
}

/// Batch-mean gradient plus the losses observed on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: ModelParams,
    /// Batch-mean weighted multi-task loss.
    pub loss: f64,
    /// Batch-mean unweighted cross entropy per layer.
    pub layer_losses: [f64; 5],
}

/// Analytic gradient of the batch-mean multi-task loss for every parameter.
pub fn backward(batch: &[Target<'_>], params: &ModelParams, weights: &[f64; 5]) -> Result<Gradients> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut layer_losses = [0.0; 5];
    for target in batch {
        let trace = target.sample.forward(params)?;
        let losses = accumulate_sample(params, &trace, target, weights, scale, &mut grads)?;
        for (acc, l) in layer_losses.iter_mut().zip(losses) {
            *acc += scale * l;
        }
        loss += scale * losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>();
    }
    Ok(Gradients { grads, loss, layer_losses })
}

fn accumulate_sample(
    params: &ModelParams,
    trace: &ForwardTrace,
    target: &Target<'_>,
    weights: &[f64; 5],
    scale: f64,
    grads: &mut ModelParams,
) -> Result<[f64; 5]> {
    let y = target.label;
    let c = trace.outputs.classes();
    if y >= c {
        return invalid(format!("label {y} outside [0, {c})"));
    }
    let steps = trace.video.steps();
    let d = trace.video.width();
    let mut d_video = Matrix::zeros(steps, d);
    let mut d_audio = Matrix::zeros(steps, d);
    let all: Vec<usize> = (0..steps).collect();
    let mut losses = [0.0; 5];

    for kind in LayerKind::ALL {
        let i = kind.index();
        let logits = trace.outputs.row(kind);
        losses[i] = cross_entropy_loss(logits, y)?;
        let w = weights[i] * scale;
        if w == 0.0 {
            continue;
        }
        let mut g = math::softmax(logits)?;
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= w);

        let fused = &trace.fused[i];
        let head = &mut grads.heads[i];
        head.weight.add_outer(1.0, &g, fused);
        math::axpy(1.0, &g, &mut head.bias);

        let d_fused = params.heads[i].weight.matvec_t(&g);
        let (pooled, video_half, audio_half): (&[usize], bool, bool) = match kind {
            LayerKind::Continuous => (&all, true, true),
            LayerKind::Instant => (&trace.instant_steps, true, true),
            LayerKind::Onset => (&trace.onset_steps, true, true),
            LayerKind::Visual => (&all, true, false),
            LayerKind::Audio => (&all, false, true),
        };
        let inv = 1.0 / pooled.len() as f64;
        for &t in pooled {
            if video_half {
                math::axpy(inv, &d_fused[..d], d_video.row_mut(t));
            }
            if audio_half {
                math::axpy(inv, &d_fused[d..], d_audio.row_mut(t));
            }
        }
    }

    encoder_backward(&params.video, &target.sample.video, trace.video_hidden.as_ref(), &d_video, &mut grads.video);
    encoder_backward(&params.audio, &target.sample.audio, trace.audio_hidden.as_ref(), &d_audio, &mut grads.audio);
    Ok(losses)
}

fn encoder_backward(enc: &Encoder, raw: &FeatureSequence, hidden: Option<&Matrix>, d_out: &Matrix, grad: &mut Encoder) {
    for t in 0..d_out.rows() {
        let dz = d_out.row(t);
        if dz.iter().all(|&v| v == 0.0) {
            continue;
        }
        match (&enc.hidden, hidden, grad.hidden.as_mut()) {
            (Some(_), Some(acts), Some(g_hidden)) => {
                let h = acts.row(t);
                grad.output.weight.add_outer(1.0, dz, h);
                math::axpy(1.0, dz, &mut grad.output.bias);
                let mut dh = enc.output.weight.matvec_t(dz);
                for (g, &a) in dh.iter_mut().zip(h) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                g_hidden.weight.add_outer(1.0, &dh, raw.row(t));
                math::axpy(1.0, &dh, &mut g_hidden.bias);
            }
            _ => {
                grad.output.weight.add_outer(1.0, dz, raw.row(t));
                math::axpy(1.0, dz, &mut grad.output.bias);
            }
        }
    }
}

fn same_layout(a: &ModelParams, b: &ModelParams) -> bool {
    a.tensor_infos() == b.tensor_infos()
}

/// Momentum SGD: `v ← μ v + g`, `θ ← θ − lr · v`.
pub fn sgd_update(
    params: &mut ModelParams,
    grads: &ModelParams,
    lr: f64,
    momentum: f64,
    velocity: &mut ModelParams,
) -> Result<()> {
    if !same_layout(params, grads) || !same_layout(params, velocity) {
        return invalid("parameter, gradient and velocity shapes differ");
    }
    let g = grads.flatten();
    let mut v = velocity.flatten();
    let mut p = params.flatten();
    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(&g) {
        *vi = momentum * *vi + gi;
        *pi -= lr * *vi;
    }
    velocity.set_flat(&v)?;
    params.set_flat(&p)
}

/// Reduce-on-plateau schedule driven by validation accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    decay: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay: f64, patience: usize) -> Self {
        Self { lr, decay, patience, best: f64::NEG_INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's accuracy and returns the learning rate for the next.
    pub fn step(&mut self, accuracy: f64) -> f64 {
        if accuracy > self.best {
            self.best = accuracy;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.decay;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after the last epoch in `history`: `lr × decay` if the best
/// accuracy has gone `patience` epochs without improving at that point,
/// otherwise `lr`. Earlier reductions in the history reset the count.
pub fn lr_schedule_step(history: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let mut sched = PlateauSchedule::new(1.0, cfg.lr_decay, cfg.patience);
    let mut before = 1.0;
    for &acc in history {
        before = sched.lr();
        sched.step(acc);
    }
    if history.is_empty() || sched.lr() == before {
        lr
    } else {
        lr * cfg.lr_decay
    }
}

/// Per-layer and voted accuracy against each sample's `label`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accuracy {
    pub layers: [f64; 5],
    pub voted: f64,
}

pub fn evaluate(samples: &[Sample], params: &ModelParams) -> Result<Accuracy> {
    if samples.is_empty() {
        return Ok(Accuracy::default());
    }
    let mut layer_hits = [0usize; 5];
    let mut voted_hits = 0usize;
    for s in samples {
        let trace = s.forward(params)?;
        for (hit, p) in layer_hits.iter_mut().zip(trace.outputs.predictions()) {
            *hit += usize::from(p == s.label);
        }
        voted_hits += usize::from(majority_vote(&trace.outputs) == s.label);
    }
    let n = samples.len() as f64;
    Ok(Accuracy {
        layers: layer_hits.map(|h| h as f64 / n),
        voted: voted_hits as f64 / n,
    })
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Mean unweighted cross entropy per layer over the epoch's batches.
    pub train_loss: [f64; 5],
    pub val_accuracy: [f64; 5],
    pub val_voted: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

/// Dimensions implied by a dataset and config.
pub fn model_dims(dataset: &[Sample], classes: usize, cfg: &TrainConfig) -> Result<ModelDims> {
    let first = dataset.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let dims = ModelDims {
        video_in: first.video.width(),
        audio_in: first.audio.width(),
        hidden: cfg.hidden_dim,
        embed: cfg.embed_dim,
        classes,
        k: cfg.k,
    };
    dims.validate()?;
    Ok(dims)
}

fn check_dataset(samples: &[Sample], dims: &ModelDims) -> Result<()> {
    for s in samples {
        s.validate(dims.classes)?;
        if s.video.width() != dims.video_in || s.audio.width() != dims.audio_in {
            return invalid(format!("sample {}: feature widths do not match the model", s.id));
        }
        if dims.k > s.video.steps() {
            return invalid(format!("sample {}: k = {} exceeds {} steps", s.id, dims.k, s.video.steps()));
        }
    }
    Ok(())
}

/// Initialises a model from `cfg` and trains it; see [`train_from`].
pub fn train(dataset: &[Sample], val: &[Sample], classes: usize, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    let dims = model_dims(dataset, classes, cfg)?;
    let params = ModelParams::init(dims, cfg.encoder_init.into(), derive_seed(cfg.seed, "init"))?;
    train_from(params, dataset, val, cfg)
}

/// Trains `params` in place of a fresh initialisation.
///
/// Each epoch shuffles the training set with a seeded generator, draws the
/// step label of every multi-label sample uniformly from its label set, runs
/// mini-batch momentum SGD, then evaluates on `val` (the training set when
/// `val` is empty) and feeds the voted accuracy to the plateau schedule.
pub fn train_from(
    mut params: ModelParams,
    dataset: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return invalid("empty dataset");
    }
    let dims = params.dims();
    check_dataset(dataset, &dims)?;
    check_dataset(val, &dims)?;
    let monitor = if val.is_empty() { dataset } else { val };

    let mut rng = Rng::new(derive_seed(cfg.seed, "shuffle"));
    let mut velocity = params.zeros_like();
    let mut sched = PlateauSchedule::new(cfg.lr0, cfg.lr_decay, cfg.patience);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = sched.lr();
        rng.shuffle(&mut order);
        let labels: Vec<usize> = dataset
            .iter()
            .map(|s| match &s.multi_labels {
                Some(ml) if !ml.is_empty() => ml[rng.index(ml.len())],
                _ => s.label,
            })
            .collect();

        let mut loss_sum = [0.0; 5];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Target<'_>> = chunk
                .iter()
                .map(|&i| Target { sample: &dataset[i], label: labels[i] })
                .collect();
            let mut g = backward(&batch, &params, &cfg.loss_weights)?;
            if cfg.freeze_encoders {
                zero_encoders(&mut g.grads);
            }
            sgd_update(&mut params, &g.grads, lr, cfg.momentum, &mut velocity)?;
            if !params.is_finite() {
                return Err(Error::NumericFailure(format!("non-finite parameters in epoch {epoch}")));
            }
            for (acc, l) in loss_sum.iter_mut().zip(g.layer_losses) {
                *acc += l;
            }
            batches += 1;
        }

        let acc = evaluate(monitor, &params)?;
        sched.step(acc.voted);
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum.map(|l| l / batches as f64),
            val_accuracy: acc.layers,
            val_voted: acc.voted,
        });
    }
    Ok((params, log))
}

fn zero_encoders(grads: &mut ModelParams) {
    for enc in [&mut grads.video, &mut grads.audio] {
        if let Some(h) = &mut enc.hidden {
            *h = Affine::zeros(h.outputs(), h.inputs());
        }
        enc.output = Affine::zeros(enc.output.outputs(), enc.output.inputs());
    }
}

/// Heads-only model: identity encoders of width `embed`, uniform heads.
pub fn heads_only_params(embed: usize, classes: usize, k: usize, seed: u64) -> Result<ModelParams> {
    let dims = ModelDims { video_in: embed, audio_in: embed, hidden: None, embed, classes, k };
    let mut p = ModelParams::init(dims, EncoderInit::Identity, seed)?;
    p.video = Encoder::identity(embed);
    p.audio = Encoder::identity(embed);
    Ok(p)
}
