use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{SegmentBank, SeparatedRecording};
use crate::corpus::{decode_audio, CorpusManifest, ManifestEntry};
use crate::segmentation::{separate_recording, SegmentationConfig, SegmentationResult};
use crate::{Error, Result};

/// File name of a recording's mask inside the cache directory. Characters
/// outside `[A-Za-z0-9._-]` become `_`.
pub fn mask_file_name(recording_id: &str) -> String {
    let stem: String = recording_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.mask")
}

pub fn mask_path(cache_dir: &Path, recording_id: &str) -> PathBuf {
    cache_dir.join(mask_file_name(recording_id))
}

/// Rejects manifests whose recording ids map to the same mask file.
pub fn check_mask_names(manifest: &CorpusManifest) -> Result<()> {
    let mut seen: HashMap<String, &str> = HashMap::new();
    for e in &manifest.entries {
        if let Some(other) = seen.insert(mask_file_name(&e.recording_id), &e.recording_id) {
            return Err(Error::Cache(format!(
                "recordings `{other}` and `{}` share the mask file {}",
                e.recording_id,
                mask_file_name(&e.recording_id)
            )));
        }
    }
    Ok(())
}

/// Decodes and separates one recording.
pub fn segment_entry(entry: &ManifestEntry, cfg: &SegmentationConfig, sample_rate: u32) -> Result<SegmentationResult> {
    let waveform = decode_audio(&entry.audio_path, sample_rate)?;
    separate_recording(&waveform, cfg)
}

/// Loads every recording of `manifest` with its cached masks.
pub fn load_segment_bank(manifest: &CorpusManifest, cache_dir: &Path, sample_rate: u32) -> Result<SegmentBank> {
    let recordings = manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = mask_path(cache_dir, &e.recording_id);
            if !path.exists() {
                return Err(Error::Cache(format!(
                    "no mask for recording `{}` at {}",
                    e.recording_id,
                    path.display()
                )));
            }
            let seg = SegmentationResult::read(&path)?;
            let waveform = decode_audio(&e.audio_path, sample_rate)?;
            if seg.len() != waveform.samples.len() {
                return Err(Error::Cache(format!(
                    "mask of `{}` covers {} samples but the audio has {}",
                    e.recording_id,
                    seg.len(),
                    waveform.samples.len()
                )));
            }
            Ok(SeparatedRecording::from_segmentation(&waveform, &seg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentBank { recordings })
}
