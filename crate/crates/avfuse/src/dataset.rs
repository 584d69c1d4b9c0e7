//! Writes synthetic datasets to disk: one manifest per split plus a binary
//! feature file per modality and sample.

use std::path::Path;

use avfuse_core::synth::{self, KindAllocation, SynthConfig, SynthRecord};

use crate::error::Result;
use crate::io::manifest::{write_manifest, Manifest, ManifestRecord};
use crate::io::matrix::write_matrix;
use crate::io::{create_dir, write_atomic};

pub const FEATURE_DIR: &str = "features";

pub fn manifest_name(split: &str) -> String {
    format!("{split}.manifest")
}

/// Writes `records` as `<dir>/<split>.manifest` with features under `features/`.
pub fn write_split(dir: &Path, split: &str, classes: usize, records: &[SynthRecord]) -> Result<()> {
    create_dir(&dir.join(FEATURE_DIR))?;
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let s = &r.sample;
        let video = format!("{FEATURE_DIR}/{}.video.avfm", s.id);
        let audio = format!("{FEATURE_DIR}/{}.audio.avfm", s.id);
        write_matrix(&dir.join(&video), s.video.values())?;
        write_matrix(&dir.join(&audio), s.audio.values())?;
        rows.push(ManifestRecord {
            id: s.id.clone(),
            category: r.category,
            label: s.label,
            multi_labels: s.multi_labels.clone(),
            video,
            audio,
            pcm: s.pcm_path.clone(),
            onsets: s.onsets.as_ref().map(|o| o.indices().to_vec()),
            kinds: Some(r.events.iter().map(|e| e.kind.name().to_string()).collect()),
            planted_steps: Some(r.events.iter().map(|e| e.planted_steps.clone()).collect()),
        });
    }
    write_manifest(&dir.join(manifest_name(split)), &Manifest::new(classes, rows)?)
}

/// Generates train/val/test splits and writes them, along with the config used.
/// Returns the number of samples per split.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig) -> Result<Vec<(&'static str, usize)>> {
    let alloc = KindAllocation::even(cfg.classes);
    create_dir(dir)?;
    let splits = synth::gen_dataset(cfg, &alloc)?;
    let mut sizes = Vec::new();
    for (name, records) in &splits {
        write_split(dir, name, cfg.classes, records)?;
        sizes.push((*name, records.len()));
    }
    let mut json = serde_json::to_vec_pretty(cfg)?;
    json.push(b'\n');
    write_atomic(&dir.join("synth.json"), &json)?;
    Ok(sizes)
}
