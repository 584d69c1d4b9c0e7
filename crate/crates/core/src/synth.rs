//! Seeded synthetic audio-visual pairs with planted event structure.
//!
//! Each class owns a unit prototype direction per modality (orthonormal
//! across classes, shared by both modalities when their widths agree). An
//! event kind decides where the prototype appears:
//!
//! | kind       | video rows            | audio rows            |
//! |------------|-----------------------|-----------------------|
//! | continuous | every step            | every step            |
//! | instant    | planted steps, scaled | planted steps, scaled |
//! | onset      | `0, p, 2p, …`         | `0, p, 2p, …`         |
//! | visual     | every step            | none                  |
//! | audio      | none                  | every step            |
//!
//! Instant rows are scaled by `correlation_strength`; everything else has unit
//! amplitude. Gaussian noise of std `noise_std` is added to every row.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::{OnsetSet, PcmClip, CLIP_SAMPLES, FRAMES_PER_STEP, HOP_LENGTH, SAMPLE_RATE};
use crate::error::{invalid, Result};
use crate::fusion::{FeatureSequence, LayerKind, Modality};
use crate::math::{self, Matrix};
use crate::rng::{derive_seed, Rng};
use crate::training::Sample;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    /// Time steps per clip.
    pub steps: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub classes: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub correlation_strength: f64,
    pub planted_instants: usize,
    pub onset_period: usize,
    /// Fraction of the noise variance that is constant over a clip, in `[0, 1]`.
    /// Zero gives independent noise at every step.
    pub noise_persistence: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            video_dim: 16,
            audio_dim: 16,
            classes: 10,
            samples_per_class: 20,
            noise_std: 0.3,
            correlation_strength: 5.0,
            planted_instants: 3,
            onset_period: 10,
            noise_persistence: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.classes == 0 {
            return invalid("steps and classes must be positive");
        }
        if self.classes > self.video_dim || self.classes > self.audio_dim {
            return invalid(format!(
                "{} orthonormal prototypes need feature widths of at least {}",
                self.classes, self.classes
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return invalid("noise_std must be finite and non-negative");
        }
        if !self.correlation_strength.is_finite() {
            return invalid("correlation_strength must be finite");
        }
        if self.planted_instants > self.steps {
            return invalid("planted_instants exceeds steps");
        }
        if self.onset_period < 2 {
            return invalid("onset_period must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.noise_persistence) {
            return invalid("noise_persistence must lie in [0, 1]");
        }
        Ok(())
    }

    /// Steps `{0, p, 2p, …} ∩ [0, T)`.
    pub fn onset_grid(&self) -> Vec<usize> {
        (0..self.steps).step_by(self.onset_period.max(1)).collect()
    }
}

/// Ground truth for one planted event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSpec {
    pub kind: LayerKind,
    pub class: usize,
    /// Steps carrying the class signal for instant and onset kinds; empty otherwise.
    pub planted_steps: Vec<usize>,
}

impl EventSpec {
    /// Draws the planted steps for `kind`: `planted_instants` distinct random
    /// steps for instant events, the onset grid for onset events.
    pub fn draw(kind: LayerKind, class: usize, cfg: &SynthConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let planted_steps = match kind {
            LayerKind::Instant => {
                let mut all: Vec<usize> = (0..cfg.steps).collect();
                Rng::new(seed).shuffle(&mut all);
                let mut s = all[..cfg.planted_instants].to_vec();
                s.sort_unstable();
                s
            }
            LayerKind::Onset => cfg.onset_grid(),
            _ => Vec::new(),
        };
        let spec = Self { kind, class, planted_steps };
        spec.check(cfg)?;
        Ok(spec)
    }

    fn check(&self, cfg: &SynthConfig) -> Result<()> {
        if self.class >= cfg.classes {
            return invalid(format!("class {} outside [0, {})", self.class, cfg.classes));
        }
        if self.planted_steps.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("planted steps must be strictly increasing");
        }
        if self.planted_steps.last().is_some_and(|&s| s >= cfg.steps) {
            return invalid("planted step outside the clip");
        }
        match self.kind {
            LayerKind::Instant if self.planted_steps.is_empty() => invalid("instant event needs planted steps"),
            LayerKind::Onset if self.planted_steps != cfg.onset_grid() => {
                invalid("onset event steps must be the onset grid")
            }
            LayerKind::Continuous | LayerKind::Visual | LayerKind::Audio if !self.planted_steps.is_empty() => {
                invalid(format!("{} event takes no planted steps", self.kind))
            }
            _ => Ok(()),
        }
    }

    fn signal_rows(&self, cfg: &SynthConfig) -> (Vec<usize>, f64, bool, bool) {
        let all = || (0..cfg.steps).collect::<Vec<_>>();
        match self.kind {
            LayerKind::Continuous => (all(), 1.0, true, true),
            LayerKind::Instant => (self.planted_steps.clone(), cfg.correlation_strength, true, true),
            LayerKind::Onset => (self.planted_steps.clone(), 1.0, true, true),
            LayerKind::Visual => (all(), 1.0, true, false),
            LayerKind::Audio => (all(), 1.0, false, true),
        }
    }
}

/// `count` orthonormal rows of width `dim` via Gram-Schmidt on Gaussian draws.
pub fn orthonormal_prototypes(count: usize, dim: usize, seed: u64) -> Result<Matrix> {
    if count > dim {
        return invalid(format!("cannot fit {count} orthonormal vectors in {dim} dimensions"));
    }
    let mut rng = Rng::new(seed);
    let mut out = Matrix::zeros(count, dim);
    let mut c = 0;
    while c < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0)).collect();
        // two passes keep the basis orthogonal to rounding precision
        for _ in 0..2 {
            for j in 0..c {
                let proj = math::dot(&v, out.row(j));
                math::axpy(-proj, out.row(j), &mut v);
            }
        }
        let norm = libm::sqrt(math::dot(&v, &v));
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        out.row_mut(c).copy_from_slice(&v);
        c += 1;
    }
    Ok(out)
}

/// Class prototypes for both modalities, fixed by `cfg.seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub video: Matrix,
    pub audio: Matrix,
}

impl Prototypes {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let video = orthonormal_prototypes(cfg.classes, cfg.video_dim, derive_seed(cfg.seed, "prototypes/video"))?;
        let audio = if cfg.audio_dim == cfg.video_dim {
            video.clone()
        } else {
            orthonormal_prototypes(cfg.classes, cfg.audio_dim, derive_seed(cfg.seed, "prototypes/audio"))?
        };
        Ok(Self { video, audio })
    }
}

fn noise_matrix(rng: &mut Rng, steps: usize, dim: usize, cfg: &SynthConfig) -> Matrix {
    let mut m = Matrix::zeros(steps, dim);
    if cfg.noise_std == 0.0 {
        return m;
    }
    let shared_scale = cfg.noise_std * libm::sqrt(cfg.noise_persistence);
    let fresh_scale = cfg.noise_std * libm::sqrt(1.0 - cfg.noise_persistence);
    let shared: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0)).collect();
    for t in 0..steps {
        for (x, s) in m.row_mut(t).iter_mut().zip(&shared) {
            *x = shared_scale * s + fresh_scale * rng.normal(0.0, 1.0);
        }
    }
    m
}

fn plant(spec: &EventSpec, cfg: &SynthConfig, protos: &Prototypes, video: &mut Matrix, audio: &mut Matrix) {
    let (rows, amp, in_video, in_audio) = spec.signal_rows(cfg);
    for t in rows {
        if in_video {
            math::axpy(amp, protos.video.row(spec.class), video.row_mut(t));
        }
        if in_audio {
            math::axpy(amp, protos.audio.row(spec.class), audio.row_mut(t));
        }
    }
}

/// Onset annotation for a synthetic clip: the planted grid for onset events,
/// otherwise as many random steps as the grid would have.
fn onset_annotation(specs: &[&EventSpec], cfg: &SynthConfig, rng: &mut Rng) -> Result<OnsetSet> {
    let planted: Vec<usize> = specs
        .iter()
        .filter(|s| s.kind == LayerKind::Onset)
        .flat_map(|s| s.planted_steps.iter().copied())
        .collect();
    if !planted.is_empty() {
        return OnsetSet::from_unsorted(planted, cfg.steps);
    }
    let mut all: Vec<usize> = (0..cfg.steps).collect();
    rng.shuffle(&mut all);
    all.truncate(cfg.onset_grid().len());
    OnsetSet::from_unsorted(all, cfg.steps)
}

fn build(specs: &[&EventSpec], cfg: &SynthConfig, seed: u64, id: String) -> Result<Sample> {
    cfg.validate()?;
    for s in specs {
        s.check(cfg)?;
    }
    let protos = Prototypes::new(cfg)?;
    let mut rng = Rng::new(seed);
    let mut video = noise_matrix(&mut rng, cfg.steps, cfg.video_dim, cfg);
    let mut audio = noise_matrix(&mut rng, cfg.steps, cfg.audio_dim, cfg);
    for s in specs {
        plant(s, cfg, &protos, &mut video, &mut audio);
    }
    let onsets = onset_annotation(specs, cfg, &mut rng)?;
    let multi_labels = (specs.len() > 1).then(|| specs.iter().map(|s| s.class).collect());
    Ok(Sample {
        id,
        video: FeatureSequence::new(Modality::Video, video)?,
        audio: FeatureSequence::new(Modality::Audio, audio)?,
        label: specs[0].class,
        multi_labels,
        onsets: Some(onsets),
        pcm_path: None,
    })
}

/// One labelled pair carrying the event described by `spec`.
pub fn gen_event_pair(spec: &EventSpec, cfg: &SynthConfig, seed: u64) -> Result<Sample> {
    build(&[spec], cfg, seed, format!("synth-{seed:016x}"))
}

/// Two superimposed events with distinct classes; the label is the first class.
pub fn gen_multi_event_pair(specs: [&EventSpec; 2], cfg: &SynthConfig, seed: u64) -> Result<Sample> {
    let [a, b] = specs;
    if a.class == b.class {
        return invalid("multi-event classes must differ");
    }
    if a.planted_steps.iter().any(|s| b.planted_steps.contains(s)) {
        return invalid("multi-event planted steps overlap");
    }
    build(&[a, b], cfg, seed, format!("multi-{seed:016x}"))
}

/// Samples in one click.
pub const CLICK_SAMPLES: usize = SAMPLE_RATE as usize / 1000;
pub const CLICK_AMPLITUDE: f64 = 0.9;

/// Ten seconds of silence with a raised-cosine click at the start of every
/// listed step (step `t` starts at sample `t · 1600`).
pub fn gen_click_pcm(click_steps: &[usize], cfg: &SynthConfig) -> Result<PcmClip> {
    let samples_per_step = HOP_LENGTH * FRAMES_PER_STEP;
    let mut pcm = vec![0.0; CLIP_SAMPLES];
    for &t in click_steps {
        if t >= cfg.steps || t * samples_per_step >= CLIP_SAMPLES {
            return invalid(format!("click step {t} outside the clip"));
        }
        let start = t * samples_per_step;
        for n in 0..CLICK_SAMPLES.min(CLIP_SAMPLES - start) {
            let s = libm::sin(core::f64::consts::PI * (n as f64 + 0.5) / CLICK_SAMPLES as f64);
            pcm[start + n] += CLICK_AMPLITUDE * s * s;
        }
    }
    PcmClip::new(pcm, SAMPLE_RATE)
}

/// How many classes carry each event kind, in [`LayerKind::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KindAllocation(pub [usize; 5]);

impl KindAllocation {
    /// Classes spread as evenly as possible, earlier kinds first.
    pub fn even(classes: usize) -> Self {
        let mut a = [classes / 5; 5];
        for slot in a.iter_mut().take(classes % 5) {
            *slot += 1;
        }
        Self(a)
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Event kind of every class: the first `a[0]` classes are continuous, and so on.
    pub fn class_kinds(&self) -> Vec<LayerKind> {
        LayerKind::ALL
            .iter()
            .zip(self.0)
            .flat_map(|(&k, n)| core::iter::repeat_n(k, n))
            .collect()
    }

    pub fn classes_of(&self, kind: LayerKind) -> Vec<usize> {
        self.class_kinds()
            .iter()
            .enumerate()
            .filter(|&(_, &k)| k == kind)
            .map(|(c, _)| c)
            .collect()
    }
}

/// A generated sample together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub sample: Sample,
    pub category: usize,
    pub events: Vec<EventSpec>,
}

/// `per_class` samples of every class for the named split. Seeds derive from
/// `(cfg.seed, split, class, index)`, so splits never share draws.
pub fn gen_split(cfg: &SynthConfig, alloc: &KindAllocation, split: &str, per_class: usize) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    if alloc.total() != cfg.classes {
        return invalid(format!("allocation covers {} classes, config has {}", alloc.total(), cfg.classes));
    }
    let mut out = Vec::with_capacity(per_class * cfg.classes);
    for (class, kind) in alloc.class_kinds().into_iter().enumerate() {
        for i in 0..per_class {
            let id = format!("{split}-{class:03}-{i:04}");
            let seed = derive_seed(cfg.seed, &id);
            let spec = EventSpec::draw(kind, class, cfg, derive_seed(seed, "plan"))?;
            let mut sample = build(&[&spec], cfg, seed, id)?;
            sample.id = format!("{split}-{class:03}-{i:04}");
            out.push(SynthRecord { sample, category: class, events: vec![spec] });
        }
    }
    Ok(out)
}

/// Per-class split sizes for an 8/1/1 train/val/test division.
pub fn split_sizes(per_class: usize) -> [(&'static str, usize); 3] {
    let val = per_class / 10;
    let test = per_class / 10;
    [("train", per_class - val - test), ("val", val), ("test", test)]
}

/// Train, validation and test splits of `cfg.samples_per_class` per class.
pub fn gen_dataset(cfg: &SynthConfig, alloc: &KindAllocation) -> Result<Vec<(&'static str, Vec<SynthRecord>)>> {
    split_sizes(cfg.samples_per_class)
        .into_iter()
        .map(|(name, n)| Ok((name, gen_split(cfg, alloc, name, n)?)))
        .collect()
}

/// Multi-event pairs mixing one class of kind `first` with one of kind
/// `second`, cycling through the class combinations.
pub fn gen_multi_split(
    cfg: &SynthConfig,
    alloc: &KindAllocation,
    first: LayerKind,
    second: LayerKind,
    count: usize,
    split: &str,
) -> Result<Vec<SynthRecord>> {
    let a = alloc.classes_of(first);
    let b = alloc.classes_of(second);
    let pairs: Vec<(usize, usize)> = a
        .iter()
        .flat_map(|&x| b.iter().map(move |&y| (x, y)))
        .filter(|(x, y)| x != y)
        .collect();
    if pairs.is_empty() {
        return invalid("no distinct class pair for the requested kinds");
    }
    (0..count)
        .map(|i| {
            let (ca, cb) = pairs[i % pairs.len()];
            let id = format!("{split}-{i:04}");
            let seed = derive_seed(cfg.seed, &id);
            let sa = EventSpec::draw(first, ca, cfg, derive_seed(seed, "plan/0"))?;
            let sb = EventSpec::draw(second, cb, cfg, derive_seed(seed, "plan/1"))?;
            let mut sample = gen_multi_event_pair([&sa, &sb], cfg, seed)?;
            sample.id = id;
            Ok(SynthRecord { sample, category: ca, events: vec![sa, sb] })
        })
        .collect()
}
