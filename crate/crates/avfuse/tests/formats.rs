use avfuse::io::checkpoint::{
    check_dims, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, quantize_params,
    save_checkpoint, Checkpoint,
};
use avfuse::io::manifest::{read_manifest, write_manifest, Manifest, ManifestRecord};
use avfuse::io::matrix::{decode_matrix, encode_matrix, quantize, read_matrix, write_matrix, MAGIC};
use avfuse::io::pgm::encode_pgm;
use avfuse::io::wav::{read_wav, write_wav};
use avfuse::io::write_atomic;
use avfuse_core::dsp::{detect_onset_steps, SAMPLE_RATE};
use avfuse_core::fusion::{EncoderInit, ModelDims, ModelParams};
use avfuse_core::rng::Rng;
use avfuse_core::synth::{gen_click_pcm, gen_split, KindAllocation, SynthConfig};
use avfuse_core::Matrix;
use proptest::prelude::*;

fn sample_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    let v = (0..rows * cols).map(|_| rng.normal(0.0, 2.0)).collect();
    Matrix::from_vec(rows, cols, v).unwrap()
}

fn dims(classes: usize) -> ModelDims {
    ModelDims { video_in: 6, audio_in: 4, hidden: Some(5), embed: 3, classes, k: 4 }
}

fn err_text<T: std::fmt::Debug>(r: avfuse::Result<T>) -> String {
    r.unwrap_err().to_string()
}

#[test]
fn matrix_round_trip_7x3() {
    let m = quantize(&sample_matrix(7, 3, 1));
    let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
    assert_eq!((back.rows(), back.cols()), (7, 3));
    assert_eq!(back, m);
}

#[test]
fn matrix_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.avfm");
    let m = quantize(&sample_matrix(5, 2, 2));
    write_matrix(&path, &m).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), m);
}

#[test]
fn matrix_empty_and_truncated() {
    assert!(err_text(decode_matrix(&[])).contains("bad magic"));
    let mut bytes = MAGIC.to_vec();
    bytes.extend(2u64.to_le_bytes());
    bytes.extend(2u64.to_le_bytes());
    for v in [1.0f32, 2.0, 3.0] {
        bytes.extend(v.to_le_bytes());
    }
    assert!(err_text(decode_matrix(&bytes)).contains("truncated"));
    bytes.extend(4.0f32.to_le_bytes());
    assert!(decode_matrix(&bytes).is_ok());
    bytes.push(0);
    assert!(decode_matrix(&bytes).is_err());
}

#[test]
fn matrix_rejects_non_finite_payload() {
    let mut bytes = encode_matrix(&Matrix::zeros(1, 2)).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_matrix(&bytes).is_err());
}

#[test]
fn matrix_header_byte_mutations_never_panic() {
    let bytes = encode_matrix(&sample_matrix(3, 2, 3)).unwrap();
    for i in 0..24 {
        for bit in 0..8 {
            let mut b = bytes.clone();
            b[i] ^= 1 << bit;
            // magic and shape changes must be detected; decoding must not panic
            assert!(decode_matrix(&b).is_err(), "byte {i} bit {bit} accepted");
        }
    }
}

fn checkpoint(classes: usize, seed: u64) -> Checkpoint {
    let params = ModelParams::init(dims(classes), EncoderInit::Uniform, seed).unwrap();
    Checkpoint { params: quantize_params(&params), seed, epoch: 7 }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.avck");
    let ck = checkpoint(3, 5);
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);

    let cfg = SynthConfig { video_dim: 6, audio_dim: 4, classes: 3, steps: 20, onset_period: 5, planted_instants: 2, ..SynthConfig::default() };
    let records = gen_split(&cfg, &KindAllocation([1, 1, 1, 0, 0]), "test", 2).unwrap();
    for r in &records {
        let s = &r.sample;
        let a = s.forward(&ck.params).unwrap();
        let b = s.forward(&back.params).unwrap();
        assert_eq!(a.outputs, b.outputs);
    }
}

#[test]
fn checkpoint_every_header_byte_mutation_is_rejected() {
    let bytes = encode_checkpoint(&checkpoint(2, 1)).unwrap();
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    // magic, length, JSON header and its checksum
    for i in 0..16 + header_len + 8 {
        let mut b = bytes.clone();
        b[i] ^= 0x20;
        assert!(decode_checkpoint(&b).is_err(), "mutation at byte {i} accepted");
    }
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.extend([0; 4]);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn checkpoint_tampered_shape_is_rejected() {
    let bytes = encode_checkpoint(&checkpoint(3, 2)).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let start = text.find("\"shape\":[").unwrap() + 9;
    let mut b = bytes.clone();
    // bump the first digit of the first tensor shape
    b[start] = if b[start] == b'9' { b'1' } else { b[start] + 1 };
    assert!(decode_checkpoint(&b).is_err());
}

#[test]
fn checkpoint_dims_mismatch_names_dims() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.avck");
    save_checkpoint(&path, &checkpoint(3, 4)).unwrap();
    assert!(load_checkpoint_for(&path, &dims(3)).is_ok());
    let msg = err_text(load_checkpoint_for(&path, &dims(4)));
    assert!(msg.contains("dims"), "{msg}");
    assert!(check_dims(&dims(3), &dims(3)).is_ok());
}

fn record(id: &str, label: usize) -> ManifestRecord {
    ManifestRecord {
        id: id.into(),
        category: label,
        label,
        multi_labels: None,
        video: format!("features/{id}.video.avfm"),
        audio: format!("features/{id}.audio.avfm"),
        pcm: None,
        onsets: Some(vec![0, 10]),
        kinds: None,
        planted_steps: None,
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.manifest");
    let mut r = record("b", 1);
    r.multi_labels = Some(vec![1, 0]);
    r.kinds = Some(vec!["visual".into(), "audio".into()]);
    let m = Manifest::new(2, vec![record("a", 0), r]).unwrap();
    write_manifest(&path, &m).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains("avfuse-manifest"));
}

#[test]
fn manifest_validation() {
    assert!(Manifest::new(2, vec![record("a", 0), record("a", 1)]).is_err());
    assert!(Manifest::new(2, vec![record("a", 2)]).is_err());
    let mut escape = record("a", 0);
    escape.video = "../outside.avfm".into();
    assert!(Manifest::new(2, vec![escape]).is_err());
    assert!(Manifest::decode("").is_err());
    assert!(Manifest::decode("{\"format\":\"other\",\"version\":1,\"classes\":2}\n").is_err());
}

#[test]
fn atomic_write_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.txt");
    write_atomic(&path, b"first").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("out.txt")]);
}

#[test]
fn wav_round_trip_keeps_click_onsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clicks.wav");
    let clicks = [10, 30, 50, 70, 90];
    let clip = gen_click_pcm(&clicks, &SynthConfig::default()).unwrap();
    write_wav(&path, &clip).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.sample_rate(), SAMPLE_RATE);
    assert_eq!(detect_onset_steps(&back, 100).unwrap().indices(), &clicks);
}

#[test]
fn wav_rejects_other_rates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert!(read_wav(&path).is_err());
}

#[test]
fn wav_reads_16_bit_int() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("int.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for s in [0i16, 16384, -32768] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let clip = read_wav(&path).unwrap();
    assert_eq!(&clip.samples()[..3], &[0.0, 0.5, -1.0]);
}

#[test]
fn pgm_header_and_scaling() {
    let m = Matrix::from_vec(2, 2, vec![0.0, 1.0, 0.5, 1.0]).unwrap();
    let bytes = encode_pgm(&m);
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 255, 128, 255]);
}

proptest! {
    #[test]
    fn matrix_round_trip_any_shape(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
        let m = quantize(&sample_matrix(rows, cols, seed));
        prop_assert_eq!(decode_matrix(&encode_matrix(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn matrix_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_matrix(&bytes);
    }

    #[test]
    fn checkpoint_decode_never_panics(cut in 0usize..400, flip in 0usize..400) {
        let mut bytes = encode_checkpoint(&checkpoint(2, 3)).unwrap();
        let n = bytes.len();
        bytes[flip % n] ^= 0xff;
        bytes.truncate(n - cut.min(n));
        let _ = decode_checkpoint(&bytes);
    }
}
