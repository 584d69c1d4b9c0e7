//! Mono 16 kHz WAV input (16-bit integer or 32-bit float).

use std::path::Path;

use avfuse_core::dsp::{PcmClip, SAMPLE_RATE};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<PcmClip> {
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(format!("{}: expected mono, got {} channels", path.display(), spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(format!("{}: expected {SAMPLE_RATE} Hz, got {}", path.display(), spec.sample_rate)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(format!("{}: unsupported sample format {fmt:?} {bits}-bit", path.display())))
        }
    };
    Ok(PcmClip::new(samples, spec.sample_rate)?)
}

/// Writes a clip as 32-bit float mono WAV.
pub fn write_wav(path: &Path, clip: &PcmClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec)?;
        for &s in clip.samples() {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
    }
    super::write_atomic(path, buf.get_ref())
}
