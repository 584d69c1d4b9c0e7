//! `avfuse <subcommand> [flags]`: one subcommand per pipeline stage.
//!
//! Machine-readable results go to stdout as line-delimited JSON; progress and
//! warnings go to stderr. Exit status is 0 on success, 1 on user error and 2
//! on internal failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use avfuse_core::analysis::{
    dataset_bias, layer_confidences, layer_uniqueness, localization_eval, localization_map, majority_vote,
    mean_f1, modality_confidences, multilabel_set, winning_layer, GridBox, SpatialFeatureMap,
};
use avfuse_core::dsp::{
    compute_logmel, map_onsets_to_steps, onset_envelope, pick_onsets, OnsetSet, PeakPicking, FRAMES_PER_STEP,
};
use avfuse_core::fusion::{EncoderInit, FeatureSequence, LayerKind, Modality, ModelDims, ModelParams};
use avfuse_core::math::{finite_diff_grad, max_relative_error};
use avfuse_core::rng::{derive_seed, Rng};
use avfuse_core::synth::SynthConfig;
use avfuse_core::training::{self, backward, multi_task_loss, Sample, Target, TrainConfig, TrainLog};
use avfuse_core::Matrix;
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{manifest_name, write_dataset};
use crate::error::{Error, Result};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EXTENSION};
use crate::io::manifest::{load_samples, Manifest};
use crate::io::matrix::{read_matrix, write_matrix};
use crate::io::pgm::write_pgm;
use crate::io::wav::read_wav;
use crate::io::{read_bytes, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Generate a synthetic dataset
    Synth,
    /// Detect onsets in a WAV file
    Onset,
    /// Train a model on a dataset
    Train,
    /// Per-sample predictions
    Predict,
    /// Accuracy and F1 summary
    Eval,
    /// Modality bias report
    Bias,
    /// Layer-uniqueness statistics
    Layerdiff,
    /// Sound localization heatmap
    Localize,
    /// Compare analytic and numerical gradients
    Gradcheck,
}

#[derive(Debug, Parser)]
#[command(name = "avfuse", version, about = "Event-type-aware audio-visual fusion")]
pub struct Cli {
    pub command: Command,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub multilabel: bool,
    #[arg(long)]
    pub window: Option<usize>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let mut ctx = Ctx { stdout, stderr };
    match dispatch(&cli, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdout, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
    }

    fn note(&mut self, msg: &str) {
        let _ = writeln!(self.stderr, "{msg}");
    }
}

fn dispatch(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    use Command::*;
    let allowed: &[&str] = match cli.command {
        Synth => &["config", "out", "seed"],
        Onset => &["data", "out"],
        Train => &["data", "out", "config", "seed", "k"],
        Predict => &["data", "ckpt", "out", "k", "multilabel"],
        Eval => &["data", "ckpt", "out", "k", "multilabel"],
        Bias => &["data", "ckpt", "out", "k"],
        Layerdiff => &["data", "ckpt", "out", "k"],
        Localize => &["data", "ckpt", "out", "window"],
        Gradcheck => &["config", "seed", "k"],
    };
    let given = [
        ("data", cli.data.is_some()),
        ("ckpt", cli.ckpt.is_some()),
        ("out", cli.out.is_some()),
        ("config", cli.config.is_some()),
        ("seed", cli.seed.is_some()),
        ("k", cli.k.is_some()),
        ("multilabel", cli.multilabel),
        ("window", cli.window.is_some()),
    ];
    if let Some((flag, _)) = given.iter().find(|(f, on)| *on && !allowed.contains(f)) {
        let name = cli.command.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        return Err(Error::Usage(format!("--{flag} is not accepted by {name}")));
    }
    match cli.command {
        Synth => cmd_synth(cli, ctx),
        Onset => cmd_onset(cli, ctx),
        Train => cmd_train(cli, ctx),
        Predict => cmd_predict(cli, ctx),
        Eval => cmd_eval(cli, ctx),
        Bias => cmd_bias(cli, ctx),
        Layerdiff => cmd_layerdiff(cli, ctx),
        Localize => cmd_localize(cli, ctx),
        Gradcheck => cmd_gradcheck(cli, ctx),
    }
}

fn required<'a>(flag: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref().ok_or_else(|| Error::Usage(format!("--{name} is required")))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

/// Writes the emitted lines to `--out` as well, when given.
fn finish(cli: &Cli, lines: &[String]) -> Result<()> {
    if let Some(out) = &cli.out {
        let mut text = lines.join("\n");
        text.push('\n');
        write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let out = required(&cli.out, "out")?;
    let mut cfg: SynthConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let sizes = write_dataset(out, &cfg)?;
    for (split, n) in sizes {
        let manifest = out.join(manifest_name(split));
        ctx.note(&format!("wrote {n} {split} samples to {}", manifest.display()));
        ctx.emit(&to_line(&json!({ "split": split, "samples": n, "manifest": manifest }))?)?;
    }
    Ok(())
}

fn cmd_onset(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let path = required(&cli.data, "data")?;
    let clip = read_wav(path)?;
    let logmel = compute_logmel(&clip)?;
    let env = onset_envelope(&logmel);
    let frames = pick_onsets(&env, &PeakPicking::default());
    let steps = map_onsets_to_steps(&frames, FRAMES_PER_STEP, logmel.frames() / FRAMES_PER_STEP)?;
    if let Some(out) = &cli.out {
        write_matrix(out, logmel.matrix())?;
        ctx.note(&format!("wrote {}x{} log-mel matrix to {}", logmel.frames(), logmel.matrix().cols(), out.display()));
    }
    ctx.emit(&to_line(&json!({ "path": path, "frames": frames, "steps": steps.indices() }))?)
}

/// Training data: a directory with `train.manifest` (and optionally
/// `val.manifest`), or a single manifest file.
fn training_data(path: &Path) -> Result<(Manifest, Vec<Sample>, Vec<Sample>)> {
    if path.is_dir() {
        let (m, train) = load_samples(&path.join(manifest_name("train")))?;
        let val_path = path.join(manifest_name("val"));
        let val = if val_path.exists() { load_samples(&val_path)?.1 } else { Vec::new() };
        Ok((m, train, val))
    } else {
        let (m, train) = load_samples(path)?;
        Ok((m, train, Vec::new()))
    }
}

/// Evaluation data: a manifest file, or a directory's `test.manifest`.
fn eval_data(path: &Path) -> Result<(Manifest, Vec<Sample>)> {
    if path.is_dir() {
        load_samples(&path.join(manifest_name("test")))
    } else {
        load_samples(path)
    }
}

#[derive(Serialize)]
struct EpochLine<'a> {
    epoch: usize,
    lr: f64,
    train_loss: &'a [f64; 5],
    val_accuracy: &'a [f64; 5],
    val_voted: f64,
}

fn log_lines(log: &TrainLog) -> Result<Vec<String>> {
    log.epochs
        .iter()
        .map(|e| {
            to_line(&EpochLine {
                epoch: e.epoch,
                lr: e.lr,
                train_loss: &e.train_loss,
                val_accuracy: &e.val_accuracy,
                val_voted: e.val_voted,
            })
        })
        .collect()
}

fn cmd_train(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let data = required(&cli.data, "data")?;
    let out = required(&cli.out, "out")?;
    let mut cfg: TrainConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    let (manifest, train_set, val) = training_data(data)?;
    ctx.note(&format!(
        "training on {} samples ({} validation), {} classes, {} epochs",
        train_set.len(),
        val.len(),
        manifest.classes,
        cfg.epochs
    ));
    let (params, log) = training::train(&train_set, &val, manifest.classes, &cfg)?;
    let (ckpt_path, log_path) = if out.extension().is_some_and(|e| e == EXTENSION) {
        (out.to_path_buf(), out.with_extension("jsonl"))
    } else {
        crate::io::create_dir(out)?;
        (out.join(format!("model.{EXTENSION}")), out.join("trainlog.jsonl"))
    };
    save_checkpoint(&ckpt_path, &Checkpoint { params, seed: cfg.seed, epoch: log.epochs.len() })?;
    let lines = log_lines(&log)?;
    let mut text = lines.join("\n");
    text.push('\n');
    write_atomic(&log_path, text.as_bytes())?;
    for l in &lines {
        ctx.emit(l)?;
    }
    if let Some(last) = log.epochs.last() {
        ctx.note(&format!("final voted accuracy {:.4}, lr {:.3e}", last.val_voted, last.lr));
    }
    ctx.note(&format!("wrote {}", ckpt_path.display()));
    Ok(())
}

/// Loads the checkpoint and dataset and checks that they fit together.
fn model_and_data(cli: &Cli) -> Result<(ModelParams, Manifest, Vec<Sample>)> {
    let ckpt = required(&cli.ckpt, "ckpt")?;
    let data = required(&cli.data, "data")?;
    let mut params = load_checkpoint(ckpt)?.params;
    if let Some(k) = cli.k {
        params.k = k;
    }
    let (manifest, samples) = eval_data(data)?;
    let dims = params.dims();
    if manifest.classes != dims.classes {
        return Err(Error::format(format!("dims: model has {} classes, data {}", dims.classes, manifest.classes)));
    }
    if let Some(s) = samples.iter().find(|s| s.video.width() != dims.video_in || s.audio.width() != dims.audio_in) {
        return Err(Error::format(format!(
            "dims: sample {} has widths {}/{}, model expects {}/{}",
            s.id,
            s.video.width(),
            s.audio.width(),
            dims.video_in,
            dims.audio_in
        )));
    }
    Ok((params, manifest, samples))
}

fn cmd_predict(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let (params, _, samples) = model_and_data(cli)?;
    let mut lines = Vec::with_capacity(samples.len());
    for s in &samples {
        let trace = s.forward(&params)?;
        let voted = majority_vote(&trace.outputs);
        let labels = if cli.multilabel { multilabel_set(&trace.outputs).labels() } else { vec![voted] };
        lines.push(to_line(&json!({
            "id": s.id,
            "voted": voted,
            "labels": labels,
            "confidences": layer_confidences(&trace.outputs),
            "onset_fallback": trace.onset_fallback,
        }))?);
    }
    for l in &lines {
        ctx.emit(l)?;
    }
    finish(cli, &lines)
}

fn layer_map<T: Serialize + Copy>(values: &[T; 5]) -> Value {
    LayerKind::ALL.iter().map(|k| (k.name().to_string(), json!(values[k.index()]))).collect()
}

fn cmd_eval(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let (params, _, samples) = model_and_data(cli)?;
    let acc = training::evaluate(&samples, &params)?;
    let mut summary = json!({
        "samples": samples.len(),
        "layer_accuracy": layer_map(&acc.layers),
        "voted_accuracy": acc.voted,
    });
    if cli.multilabel && !samples.is_empty() {
        let pairs = samples
            .iter()
            .map(|s| {
                let truth = s.multi_labels.clone().unwrap_or_else(|| vec![s.label]);
                Ok((multilabel_set(&s.forward(&params)?.outputs).labels(), truth))
            })
            .collect::<Result<Vec<_>>>()?;
        summary["mean_f1"] = json!(mean_f1(&pairs)?);
    }
    let line = to_line(&summary)?;
    ctx.emit(&line)?;
    finish(cli, &[line])
}

fn cmd_bias(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let (params, manifest, samples) = model_and_data(cli)?;
    let mut lines = Vec::new();
    let mut results = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(&manifest.records) {
        let outputs = s.forward(&params)?.outputs;
        let conf = modality_confidences(&outputs, s.label)?;
        let winner = winning_layer(&conf);
        results.push((r.category, winner));
        lines.push(to_line(&json!({
            "type": "sample",
            "id": s.id,
            "category": r.category,
            "winner": winner.name(),
            "confidences": conf,
        }))?);
    }
    let report = dataset_bias(&results, manifest.classes);
    for c in &report.empty_categories {
        ctx.note(&format!("warning: category {c} has no samples; skipped"));
    }
    let categories: serde_json::Map<String, Value> =
        report.category_layers.iter().map(|(c, l)| (c.to_string(), json!(l.name()))).collect();
    lines.push(to_line(&json!({
        "type": "summary",
        "categories": categories,
        "counts": layer_map(&report.counts),
        "empty_categories": report.empty_categories,
    }))?);
    for l in &lines {
        ctx.emit(l)?;
    }
    finish(cli, &lines)
}

fn cmd_layerdiff(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let (params, _, samples) = model_and_data(cli)?;
    let correct = samples
        .iter()
        .map(|s| {
            let p = s.forward(&params)?.outputs.predictions();
            Ok([p[0] == s.label, p[1] == s.label, p[2] == s.label])
        })
        .collect::<Result<Vec<_>>>()?;
    let u = layer_uniqueness(&correct);
    let line = to_line(&json!({
        "samples": samples.len(),
        "continuous_only": u.continuous_only,
        "instant_only": u.instant_only,
        "onset_only": u.onset_only,
        "instant_or_onset_not_continuous": u.instant_or_onset_not_continuous,
    }))?;
    ctx.emit(&line)?;
    finish(cli, &[line])
}

/// Input description for `localize`; paths are relative to the job file.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeJob {
    /// Matrix with `steps · height · width` rows (step-major, then row, then
    /// column) and one column per activation channel.
    pub vmap: String,
    pub height: usize,
    pub width: usize,
    /// Audio features, one row per step.
    pub audio: String,
    /// Optional ground truth `[top, left, bottom, right]`, half-open.
    #[serde(default)]
    pub gt_box: Option<[usize; 4]>,
}

pub const DEFAULT_WINDOW: usize = 30;

fn cmd_localize(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let job_path = required(&cli.data, "data")?;
    let window = cli.window.unwrap_or(DEFAULT_WINDOW);
    if window == 0 {
        return Err(Error::Usage("--window must be at least 1".into()));
    }
    let job: LocalizeJob = read_json(job_path)?;
    let base = job_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let vm = read_matrix(&base.join(&job.vmap))?;
    let cells = job.height * job.width;
    if cells == 0 || vm.rows() % cells != 0 {
        return Err(Error::Usage(format!("vmap has {} rows, not a multiple of {}x{}", vm.rows(), job.height, job.width)));
    }
    let vmap = SpatialFeatureMap::new(vm.rows() / cells, job.height, job.width, vm.cols(), vm.into_vec())?;
    let raw = FeatureSequence::new(Modality::Audio, read_matrix(&base.join(&job.audio))?)?;
    let za = match &cli.ckpt {
        Some(p) => load_checkpoint(p)?.params.audio.encode(&raw)?,
        None => raw,
    };
    let map = localization_map(&vmap, &za, window)?;
    let avg = &map.averaged;
    let best = avfuse_core::math::argmax(avg.as_slice())?;
    let mut summary = json!({
        "window": [map.window.0, map.window.1],
        "argmax": [best / avg.cols(), best % avg.cols()],
        "max": avg.as_slice()[best],
    });
    if let Some([top, left, bottom, right]) = job.gt_box {
        let score = localization_eval(avg, GridBox { top, left, bottom, right })?;
        summary["iou"] = json!(score.iou);
        summary["auc"] = json!(score.auc);
    }
    if let Some(out) = &cli.out {
        write_matrix(out, avg)?;
        let pgm = out.with_extension("pgm");
        write_pgm(&pgm, avg)?;
        ctx.note(&format!("wrote {} and {}", out.display(), pgm.display()));
    }
    ctx.emit(&to_line(&summary)?)
}

fn random_sample(rng: &mut Rng, id: usize, steps: usize, dims: &ModelDims) -> Result<Sample> {
    let mut seq = |m: Modality, width: usize| {
        let v = (0..steps * width).map(|_| rng.normal(0.0, 1.0)).collect();
        FeatureSequence::new(m, Matrix::from_vec(steps, width, v)?)
    };
    let video = seq(Modality::Video, dims.video_in)?;
    let audio = seq(Modality::Audio, dims.audio_in)?;
    let onsets = (0..1 + rng.index(3)).map(|_| rng.index(steps)).collect();
    Ok(Sample {
        id: format!("gradcheck-{id}"),
        video,
        audio,
        label: rng.index(dims.classes),
        multi_labels: None,
        onsets: Some(OnsetSet::from_unsorted(onsets, steps)?),
        pcm_path: None,
    })
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn cmd_gradcheck(cli: &Cli, ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg: TrainConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => TrainConfig { embed_dim: 4, hidden_dim: Some(6), k: 3, ..TrainConfig::default() },
    };
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let steps = cfg.k.max(8);
    let dims = ModelDims { video_in: 5, audio_in: 3, hidden: cfg.hidden_dim, embed: cfg.embed_dim, classes: 3, k: cfg.k };
    let mut worst: f64 = 0.0;
    let instances = 10;
    for i in 0..instances {
        let s = derive_seed(seed, &format!("gradcheck/{i}"));
        let mut rng = Rng::new(s);
        let mut params = ModelParams::init(dims, EncoderInit::Uniform, s)?;
        // zero biases would tie the scores of fully inactive steps at exactly 0
        let jittered: Vec<f64> = params.flatten().iter().map(|x| x + rng.normal(0.0, 0.3)).collect();
        params.set_flat(&jittered)?;
        let batch = (0..2).map(|j| random_sample(&mut rng, j, steps, &dims)).collect::<Result<Vec<_>>>()?;
        let targets: Vec<Target<'_>> = batch.iter().map(Target::from).collect();
        let analytic = backward(&targets, &params, &cfg.loss_weights)?.grads.flatten();
        let mut probe = params.clone();
        let numeric = finite_diff_grad(
            |x| {
                if probe.set_flat(x).is_err() {
                    return f64::NAN;
                }
                batch
                    .iter()
                    .map(|b| {
                        b.forward(&probe)
                            .and_then(|t| multi_task_loss(&t.outputs, b.label, &cfg.loss_weights))
                            .unwrap_or(f64::NAN)
                    })
                    .sum::<f64>()
                    / batch.len() as f64
            },
            &params.flatten(),
            1e-5,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
    }
    let pass = worst < GRADCHECK_TOLERANCE;
    ctx.emit(&to_line(&json!({
        "instances": instances,
        "params": ModelParams::init(dims, EncoderInit::Uniform, 0)?.num_params(),
        "max_relative_error": worst,
        "tolerance": GRADCHECK_TOLERANCE,
        "pass": pass,
    }))?)?;
    if !pass {
        return Err(Error::Core(avfuse_core::Error::NumericFailure(format!(
            "gradient check failed: max relative error {worst:.3e}"
        ))));
    }
    Ok(())
}
