//! Dataset manifests: line-delimited JSON. The first line is a header naming
//! the class count; every other line describes one sample. Feature paths are
//! relative to the manifest's directory.

use std::path::{Path, PathBuf};

use avfuse_core::dsp::OnsetSet;
use avfuse_core::fusion::{FeatureSequence, Modality};
use avfuse_core::training::Sample;
use serde::{Deserialize, Serialize};

use super::matrix::read_matrix;
use crate::error::{Error, Result};

pub const FORMAT: &str = "avfuse-manifest";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub category: usize,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_labels: Option<Vec<usize>>,
    pub video: String,
    pub audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcm: Option<String>,
    /// Onset steps; when absent they are detected from `pcm` if present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onsets: Option<Vec<usize>>,
    /// Planted event kinds (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<String>>,
    /// Planted steps per event (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_steps: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub classes: usize,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(classes: usize, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Self { classes, records };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::format("manifest declares zero classes"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::format(format!("duplicate sample id {}", r.id)));
            }
            let labels = std::iter::once(r.label).chain(r.multi_labels.iter().flatten().copied());
            if let Some(bad) = labels.into_iter().find(|&l| l >= self.classes) {
                return Err(Error::format(format!("sample {}: label {bad} outside [0, {})", r.id, self.classes)));
            }
            for p in [&r.video, &r.audio].into_iter().chain(r.pcm.as_ref()) {
                if Path::new(p).is_absolute() || p.split(['/', '\\']).any(|c| c == "..") {
                    return Err(Error::format(format!("sample {}: path {p} must stay inside the dataset", r.id)));
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<String> {
        let header = ManifestHeader { format: FORMAT.into(), version: VERSION, classes: self.classes };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::format("empty manifest"))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| Error::format(format!("manifest header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::format(format!("unsupported manifest {} v{}", header.format, header.version)));
        }
        let records = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(format!("manifest line {}: {e}", n + 1))))
            .collect::<Result<Vec<ManifestRecord>>>()?;
        Self::new(header.classes, records)
    }
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    super::write_atomic(path, m.encode()?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = super::read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("manifest is not UTF-8"))?;
    Manifest::decode(&text)
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Reads every sample's features. Onsets come from the record, else from its
/// PCM file, else stay unset (the onset layer then falls back).
pub fn load_samples(manifest_path: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(manifest_path)?;
    let base = base_dir(manifest_path);
    let samples = manifest
        .records
        .iter()
        .map(|r| load_sample(&base, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

fn load_sample(base: &Path, r: &ManifestRecord) -> Result<Sample> {
    let video = FeatureSequence::new(Modality::Video, read_matrix(&base.join(&r.video))?)?;
    let audio = FeatureSequence::new(Modality::Audio, read_matrix(&base.join(&r.audio))?)?;
    if video.steps() != audio.steps() {
        return Err(Error::format(format!("sample {}: video and audio step counts differ", r.id)));
    }
    let onsets = match (&r.onsets, &r.pcm) {
        (Some(o), _) => Some(OnsetSet::from_unsorted(o.clone(), video.steps())?),
        (None, Some(pcm)) => {
            let clip = super::wav::read_wav(&base.join(pcm))?;
            Some(avfuse_core::dsp::detect_onset_steps(&clip, video.steps())?)
        }
        (None, None) => None,
    };
    Ok(Sample {
        id: r.id.clone(),
        video,
        audio,
        label: r.label,
        multi_labels: r.multi_labels.clone(),
        onsets,
        pcm_path: r.pcm.clone(),
    })
}
