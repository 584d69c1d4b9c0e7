//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own PASS/FAIL line even when the run succeeds.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use avfuse_core::analysis::{
    dataset_bias, layer_uniqueness, localization_eval, localization_map, majority_vote, mean_f1,
    modality_confidences, multilabel_set, winning_layer, GridBox, SpatialFeatureMap,
};
use avfuse_core::dsp::{
    compute_logmel, map_onsets_to_steps, onset_envelope, pick_onsets, OnsetSet, PcmClip, PeakPicking,
    FRAMES_PER_STEP, SAMPLE_RATE,
};
use avfuse_core::fusion::{
    fuse_continuous, fuse_instant, fuse_onset, EncoderInit, FeatureSequence, LayerKind, LayerOutputs, Modality,
    ModelDims, ModelParams,
};
use avfuse_core::math::{dot, finite_diff_grad, max_relative_error};
use avfuse_core::rng::{derive_seed, Rng};
use avfuse_core::synth::{gen_click_pcm, gen_multi_split, gen_split, KindAllocation, SynthConfig, SynthRecord};
use avfuse_core::training::{
    backward, multi_task_loss, train, InitScheme, Sample, Target, TrainConfig,
};
use avfuse_core::Matrix;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, n: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} {name}: PASS ({d}; {secs:.2}s)"),
            Err(d) => {
                self.failures += 1;
                println!("criterion {n:>2} {name}: FAIL ({d}; {secs:.2}s)");
            }
        }
    }
}

fn random_seq(rng: &mut Rng, m: Modality, steps: usize, width: usize) -> FeatureSequence {
    let v = (0..steps * width).map(|_| rng.normal(0.0, 1.0)).collect();
    FeatureSequence::new(m, Matrix::from_vec(steps, width, v).unwrap()).unwrap()
}

fn shape_fidelity() -> Outcome {
    let mut rng = Rng::new(1);
    let clip = PcmClip::new((0..160_000).map(|_| rng.uniform(-0.5, 0.5)).collect(), SAMPLE_RATE).unwrap();
    let start = Instant::now();
    let m = compute_logmel(&clip).unwrap();
    let took = start.elapsed();
    let (rows, cols) = (m.matrix().rows(), m.matrix().cols());
    let steps = SynthConfig::default().steps;
    let k = TrainConfig::default().k;
    ensure(
        (rows, cols) == (1000, 80) && steps == 100 && k == 10 && took < Duration::from_secs(1),
        format!("log-mel {rows}x{cols} in {:.3}s, T={steps}, k={k}", took.as_secs_f64()),
    )
}

fn degeneracy() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let steps = 1 + rng.index(30);
        let width = 1 + rng.index(8);
        let zv = random_seq(&mut rng, Modality::Video, steps, width);
        let za = random_seq(&mut rng, Modality::Audio, steps, width);
        let cont = fuse_continuous(&zv, &za).unwrap();
        let inst = fuse_instant(&zv, &za, steps).unwrap();
        let all = OnsetSet::new((0..steps).collect(), steps).unwrap();
        let ons = fuse_onset(&zv, &za, &all).unwrap();
        for (c, (i, o)) in cont.iter().zip(inst.iter().zip(&ons)) {
            worst = worst.max((c - i).abs()).max((c - o).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:.2e} over 1000 instances"))
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut touched: Option<Vec<bool>> = None;
    let mut groups = Vec::new();
    for i in 0..100 {
        let mut rng = Rng::new(derive_seed(3, &format!("instance/{i}")));
        let steps = 4 + rng.index(10);
        let k = 1 + rng.index(steps);
        let hidden = if i % 2 == 0 { Some(2 + rng.index(4)) } else { None };
        let dims = ModelDims {
            video_in: 2 + rng.index(4),
            audio_in: 2 + rng.index(4),
            hidden,
            embed: 2 + rng.index(3),
            classes: 2 + rng.index(4),
            k,
        };
        let mut params = ModelParams::init(dims, EncoderInit::Uniform, rng.next_u64()).unwrap();
        // zero biases would tie the scores of fully inactive steps at exactly 0
        let jittered: Vec<f64> = params.flatten().iter().map(|x| x + rng.normal(0.0, 0.3)).collect();
        params.set_flat(&jittered).unwrap();
        let batch: Vec<Sample> = (0..2)
            .map(|j| {
                let onsets = (0..1 + rng.index(3)).map(|_| rng.index(steps)).collect();
                Sample {
                    id: format!("g{j}"),
                    video: random_seq(&mut rng, Modality::Video, steps, dims.video_in),
                    audio: random_seq(&mut rng, Modality::Audio, steps, dims.audio_in),
                    label: rng.index(dims.classes),
                    multi_labels: None,
                    onsets: Some(OnsetSet::from_unsorted(onsets, steps).unwrap()),
                    pcm_path: None,
                }
            })
            .collect();
        let weights = [1.0, 0.5 + rng.uniform(0.0, 1.0), 1.0, 2.0, 0.7];
        let targets: Vec<Target<'_>> = batch.iter().map(Target::from).collect();
        let analytic = backward(&targets, &params, &weights).unwrap().grads.flatten();
        let mut probe = params.clone();
        let numeric = finite_diff_grad(
            |x| {
                probe.set_flat(x).unwrap();
                let total: f64 = batch
                    .iter()
                    .map(|b| multi_task_loss(&b.forward(&probe).unwrap().outputs, b.label, &weights).unwrap())
                    .sum();
                total / batch.len() as f64
            },
            &params.flatten(),
            1e-5,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-6));
        if hidden.is_some() {
            let mut offset = 0;
            let mut hit = Vec::new();
            groups.clear();
            for info in params.tensor_infos() {
                let n = info.rows * info.cols;
                hit.push(analytic[offset..offset + n].iter().any(|&g| g != 0.0));
                groups.push(info.name);
                offset += n;
            }
            touched = Some(match touched {
                None => hit,
                Some(prev) => prev.iter().zip(&hit).map(|(a, b)| *a || *b).collect(),
            });
        }
    }
    let untouched: Vec<&String> =
        groups.iter().zip(touched.unwrap_or_default()).filter(|(_, t)| !t).map(|(g, _)| g).collect();
    ensure(
        worst < 1e-4 && untouched.is_empty(),
        format!("max relative error {worst:.2e}, {} parameter groups, untouched {untouched:?}", groups.len()),
    )
}

fn multilabel_guarantee() -> Outcome {
    let mut rng = Rng::new(4);
    let (mut min, mut max) = (usize::MAX, 0);
    for _ in 0..100_000 {
        let c = 2 + rng.index(49);
        let v = (0..5 * c).map(|_| rng.normal(0.0, 3.0)).collect();
        let set = multilabel_set(&LayerOutputs::new(Matrix::from_vec(5, c, v).unwrap()).unwrap());
        min = min.min(set.len());
        max = max.max(set.len());
    }
    ensure(min >= 1 && max <= 5, format!("|P| in [{min}, {max}] over 1e5 tables"))
}

// --- trained-model scenario shared by criteria 5 to 7 ---

const CLASSES: usize = 10;

fn scenario_synth(noise_std: f64) -> SynthConfig {
    SynthConfig {
        classes: CLASSES,
        video_dim: 16,
        audio_dim: 16,
        noise_std,
        planted_instants: 2,
        correlation_strength: 5.0,
        onset_period: 10,
        seed: 20,
        ..SynthConfig::default()
    }
}

fn scenario_train(loss_weights: [f64; 5]) -> TrainConfig {
    TrainConfig { embed_dim: 16, encoder_init: InitScheme::Identity, epochs: 100, loss_weights, ..TrainConfig::default() }
}

struct Trained {
    params: ModelParams,
    test: Vec<SynthRecord>,
}

fn trained(cfg: &SynthConfig, tc: &TrainConfig) -> Trained {
    let alloc = KindAllocation::even(CLASSES);
    let samples = |split: &str, n: usize| gen_split(cfg, &alloc, split, n).unwrap();
    let train_set: Vec<Sample> = samples("train", 50).into_iter().map(|r| r.sample).collect();
    let val: Vec<Sample> = samples("val", 10).into_iter().map(|r| r.sample).collect();
    let (params, _) = train(&train_set, &val, CLASSES, tc).unwrap();
    Trained { params, test: samples("test", 10) }
}

fn kind_of(category: usize) -> LayerKind {
    KindAllocation::even(CLASSES).class_kinds()[category]
}

fn selectivity(base: &Trained, noisy: &Trained) -> Outcome {
    let mut per_kind = Vec::new();
    for kind in LayerKind::ALL {
        let recs: Vec<_> = base.test.iter().filter(|r| kind_of(r.category) == kind).collect();
        let correct = recs
            .iter()
            .filter(|r| r.sample.forward(&base.params).unwrap().outputs.predictions()[kind.index()] == r.sample.label)
            .count();
        per_kind.push((kind, correct as f64 / recs.len() as f64));
    }
    let a_ok = per_kind.iter().all(|&(_, acc)| acc >= 0.95);

    let instant: Vec<_> = noisy.test.iter().filter(|r| kind_of(r.category) == LayerKind::Instant).collect();
    let correct: Vec<[bool; 3]> = instant
        .iter()
        .map(|r| {
            let p = r.sample.forward(&noisy.params).unwrap().outputs.predictions();
            [p[0] == r.sample.label, p[1] == r.sample.label, p[2] == r.sample.label]
        })
        .collect();
    let n = correct.len() as f64;
    let inst_acc = correct.iter().filter(|c| c[1]).count() as f64 / n;
    let cont_acc = correct.iter().filter(|c| c[0]).count() as f64 / n;
    let b_ok = inst_acc - cont_acc >= 0.10;
    let unique = layer_uniqueness(&correct).instant_only;
    let c_ok = unique > 0;

    let kinds: Vec<String> = per_kind.iter().map(|(k, a)| format!("{}={a:.2}", k.name())).collect();
    ensure(
        a_ok && b_ok && c_ok,
        format!(
            "(a) {} [{}]; (b) noisy instant {inst_acc:.2} vs continuous {cont_acc:.2} [{}]; (c) instant-only {unique} [{}]",
            kinds.join(" "),
            pass(a_ok),
            pass(b_ok),
            pass(c_ok)
        ),
    )
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "fail"
    }
}

/// Fractions of visual-kind and audio-kind categories assigned to their own layer.
fn bias_fractions(model: &Trained) -> (f64, f64) {
    let results: Vec<(usize, LayerKind)> = model
        .test
        .iter()
        .map(|r| {
            let out = r.sample.forward(&model.params).unwrap().outputs;
            (r.category, winning_layer(&modality_confidences(&out, r.sample.label).unwrap()))
        })
        .collect();
    let report = dataset_bias(&results, CLASSES);
    let alloc = KindAllocation::even(CLASSES);
    let frac = |kind: LayerKind| {
        let cats = alloc.classes_of(kind);
        cats.iter().filter(|c| report.category_layers.get(c) == Some(&kind)).count() as f64 / cats.len() as f64
    };
    (frac(LayerKind::Visual), frac(LayerKind::Audio))
}

fn modality_bias(model: &Trained) -> Outcome {
    let (v, a) = bias_fractions(model);
    ensure(v >= 0.9 && a >= 0.9, format!("visual categories to visual layer {v:.2}, audio to audio {a:.2}"))
}

/// Mean F1 and voted accuracy on visual+audio event pairs.
fn multilabel_scores(model: &Trained) -> (f64, f64) {
    let cfg = scenario_synth(0.3);
    let pairs = gen_multi_split(&cfg, &KindAllocation::even(CLASSES), LayerKind::Visual, LayerKind::Audio, 200, "multi")
        .unwrap();
    let mut sets = Vec::new();
    let mut hits = 0;
    for r in &pairs {
        let out = r.sample.forward(&model.params).unwrap().outputs;
        let truth = r.sample.multi_labels.clone().unwrap();
        if truth.contains(&majority_vote(&out)) {
            hits += 1;
        }
        sets.push((multilabel_set(&out).labels(), truth));
    }
    (mean_f1(&sets).unwrap(), hits as f64 / pairs.len() as f64)
}

fn multilabel_recovery(model: &Trained) -> Outcome {
    let (f1, voted) = multilabel_scores(model);
    ensure(f1 >= 0.8 && voted >= 0.95, format!("200 pairs: mean F1 {f1:.3}, voted accuracy {voted:.3}"))
}

fn onset_pipeline() -> Outcome {
    let steps = 100;
    let clicks: Vec<usize> = (1..10).map(|i| i * 10).collect();
    let detect = |clip: &PcmClip| {
        let logmel = compute_logmel(clip).unwrap();
        let frames = pick_onsets(&onset_envelope(&logmel), &PeakPicking::default());
        map_onsets_to_steps(&frames, FRAMES_PER_STEP, steps).unwrap()
    };
    let found = detect(&gen_click_pcm(&clicks, &SynthConfig::default()).unwrap());
    let tp = found.indices().iter().filter(|s| clicks.contains(s)).count() as f64;
    let precision = if found.is_empty() { 0.0 } else { tp / found.len() as f64 };
    let recall = tp / clicks.len() as f64;
    // 1 kHz repeats exactly every hop, and a zero-phase cosine survives the
    // reflect padding of the first frame unchanged
    let tone: Vec<f64> = (0..160_000)
        .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / f64::from(SAMPLE_RATE)).cos())
        .collect();
    let tone_onsets = detect(&PcmClip::new(tone, SAMPLE_RATE).unwrap());
    ensure(
        precision == 1.0 && recall == 1.0 && tone_onsets.is_empty(),
        format!("clicks: precision {precision}, recall {recall}; tone: {} onsets", tone_onsets.len()),
    )
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn localization_geometry() -> Outcome {
    let mut rng = Rng::new(9);
    let mut argmax_hits = 0;
    for _ in 0..100 {
        let (steps, h, w, d) = (1 + rng.index(40), 1 + rng.index(8), 1 + rng.index(8), 2 + rng.index(6));
        let (ph, pw) = (rng.index(h), rng.index(w));
        let mut za = Vec::new();
        let mut cells = Vec::new();
        for _ in 0..steps {
            let a = unit(&mut rng, d);
            for r in 0..h {
                for c in 0..w {
                    if (r, c) == (ph, pw) {
                        cells.extend_from_slice(&a);
                    } else {
                        // random direction with the audio component removed
                        let mut x: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
                        let proj = dot(&x, &a);
                        x.iter_mut().zip(&a).for_each(|(xi, ai)| *xi -= proj * ai);
                        cells.extend(x);
                    }
                }
            }
            za.extend(a);
        }
        let vmap = SpatialFeatureMap::new(steps, h, w, d, cells).unwrap();
        let za = FeatureSequence::new(Modality::Audio, Matrix::from_vec(steps, d, za).unwrap()).unwrap();
        let map = localization_map(&vmap, &za, 30).unwrap();
        let avg = map.averaged.as_slice();
        let best = (0..avg.len()).fold(0, |b, i| if avg[i] > avg[b] { i } else { b });
        if best == ph * w + pw && (avg[best] - 1.0).abs() < 1e-9 {
            argmax_hits += 1;
        }
    }

    let grid = |cells: &[(usize, usize)]| {
        let mut m = Matrix::zeros(6, 6);
        for &(r, c) in cells {
            m.set(r, c, 1.0);
        }
        m
    };
    let gt = GridBox { top: 1, left: 1, bottom: 3, right: 3 };
    let boxed = [(1, 1), (1, 2), (2, 1), (2, 2)];
    let inside = localization_eval(&grid(&boxed), gt).unwrap().iou;
    let disjoint = localization_eval(&grid(&[(4, 4), (4, 5), (5, 4), (5, 5)]), gt).unwrap().iou;
    // box plus a disjoint region of twice its area
    let mut third: Vec<(usize, usize)> = boxed.to_vec();
    third.extend((0..6).map(|c| (5, c)).chain([(4, 4), (4, 5)]));
    let third = localization_eval(&grid(&third), gt).unwrap().iou;
    ensure(
        argmax_hits == 100 && inside == 1.0 && disjoint == 0.0 && (third - 1.0 / 3.0).abs() < 1e-12,
        format!("argmax at planted cell {argmax_hits}/100; IoU {inside} / {disjoint} / {third:.6}"),
    )
}

fn determinism() -> Outcome {
    let run = |dir: &Path| {
        std::fs::write(
            dir.join("synth.json"),
            r#"{"classes": 5, "samples_per_class": 10, "steps": 40, "onset_period": 10, "planted_instants": 2, "seed": 11}"#,
        )
        .unwrap();
        std::fs::write(dir.join("train.json"), r#"{"epochs": 5, "k": 5}"#).unwrap();
        let s = |p: &str| dir.join(p).to_str().unwrap().to_string();
        let steps: [Vec<String>; 4] = [
            vec!["synth".into(), "--config".into(), s("synth.json"), "--out".into(), s("ds")],
            vec!["train".into(), "--data".into(), s("ds"), "--config".into(), s("train.json"), "--seed".into(), "7".into(), "--out".into(), s("run")],
            vec!["predict".into(), "--ckpt".into(), s("run/model.avck"), "--data".into(), s("ds/test.manifest"), "--out".into(), s("pred.jsonl")],
            vec!["bias".into(), "--ckpt".into(), s("run/model.avck"), "--data".into(), s("ds/test.manifest"), "--out".into(), s("bias.jsonl")],
        ];
        for args in steps {
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = avfuse::cli::run(std::iter::once("avfuse".to_string()).chain(args), &mut out, &mut err);
            assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        }
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    let mut files: Vec<String> = ["ds/train.manifest", "ds/val.manifest", "ds/test.manifest", "run/model.avck", "run/trainlog.jsonl", "pred.jsonl", "bias.jsonl"]
        .map(String::from)
        .to_vec();
    for e in std::fs::read_dir(a.path().join("ds/features")).unwrap() {
        files.push(format!("ds/features/{}", e.unwrap().file_name().to_str().unwrap()));
    }
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap_or_default())
        .collect();
    ensure(differing.is_empty(), format!("{} files compared, differing {differing:?}", files.len()))
}

fn softmax_conf(row: &[f64], j: usize) -> f64 {
    row[j].exp() / row.iter().map(|x| x.exp()).sum::<f64>()
}

fn vote_semantics() -> Outcome {
    // predictions [1, 1, 2, 2, 4]; the onset layer is sure of class 2
    let tie = vec![
        vec![0.0, 1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.5, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 4.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.5, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 2.0],
    ];
    // hand-computed confidences: e^4 / (e^4 + 4) ≈ 0.9317 is the largest
    let conf: Vec<f64> = tie.iter().zip([1, 1, 2, 2, 4]).map(|(r, p)| softmax_conf(r, p)).collect();
    let expected_conf = [1f64.exp() / (1f64.exp() + 4.0), 1.5f64.exp() / (1.5f64.exp() + 4.0), 4f64.exp() / (4f64.exp() + 4.0)];
    let conf_ok = (conf[2] - expected_conf[2]).abs() < 1e-15
        && conf[2] > conf[0].max(conf[1]).max(conf[3]).max(conf[4])
        && (conf[0] - expected_conf[0]).abs() < 1e-15;
    let tie_vote = majority_vote(&LayerOutputs::from_rows(&tie).unwrap());

    // predictions [3, 3, 3, 1, 2]; the dissenting layers are far more confident
    let strict = vec![
        vec![0.0, 0.0, 0.0, 0.1, 0.0],
        vec![0.0, 0.0, 0.0, 0.1, 0.0],
        vec![0.0, 0.0, 0.0, 0.1, 0.0],
        vec![0.0, 9.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 9.0, 0.0, 0.0],
    ];
    let strict_vote = majority_vote(&LayerOutputs::from_rows(&strict).unwrap());
    ensure(
        conf_ok && tie_vote == 2 && strict_vote == 3,
        format!("2-2-1 tie -> {tie_vote} (expected 2), strict majority -> {strict_vote} (expected 3)"),
    )
}

fn main() {
    let mut report = Report { failures: 0 };
    report.check(1, "shape fidelity", shape_fidelity);
    report.check(2, "degeneracy identities", degeneracy);
    report.check(3, "gradient oracle", gradient_oracle);
    report.check(4, "non-empty multi-label set", multilabel_guarantee);

    let start = Instant::now();
    let weighted = scenario_train([1.0, 1.0, 1.0, 2.0, 2.0]);
    let base = catch_unwind(|| trained(&scenario_synth(0.3), &weighted));
    let noisy = catch_unwind(|| trained(&scenario_synth(1.0), &weighted));
    println!("scenario models trained in {:.1}s", start.elapsed().as_secs_f64());
    match (&base, &noisy) {
        (Ok(base), Ok(noisy)) => {
            report.check(5, "planted-event selectivity", || selectivity(base, noisy));
            report.check(6, "modality bias recovery", || modality_bias(base));
            report.check(7, "multi-label recovery", || multilabel_recovery(base));
        }
        _ => {
            for (n, name) in [(5, "planted-event selectivity"), (6, "modality bias recovery"), (7, "multi-label recovery")] {
                report.check(n, name, || Err("scenario training failed".into()));
            }
        }
    }

    report.check(8, "onset pipeline", onset_pipeline);
    report.check(9, "localization geometry", localization_geometry);
    report.check(10, "determinism", determinism);
    report.check(11, "vote semantics", vote_semantics);

    // informational: the same scenario with equal loss weights
    if let Ok(equal) = catch_unwind(|| trained(&scenario_synth(0.3), &scenario_train([1.0; 5]))) {
        let (v, a) = bias_fractions(&equal);
        let (f1, voted) = multilabel_scores(&equal);
        println!(
            "info: equal loss weights give bias fractions visual {v:.2} / audio {a:.2}, multi-label F1 {f1:.3}, voted {voted:.3}"
        );
    }

    println!("{} of 11 criteria passed", 11 - report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
