//! Whole-recording prediction, ensembling and MAP evaluation.

mod io;
mod map;

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{decode_audio, CorpusManifest};
use crate::dsp::FeatureExtractor;
use crate::metadata::{compute_species_stats, metadata_vector_unlabeled, MetadataVector};
use crate::net::{forward, Mode, NetworkParams, Sample};
use crate::{Error, RandomSource, Result};

pub use io::{read_judgments, read_predictions, write_judgments, write_predictions};
pub use map::{average_precision, map_score, rank_classes, MapMode, RelevanceJudgment};

/// Class probabilities for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub recording_id: String,
    pub probabilities: Vec<f64>,
}

/// Anything that maps one feature matrix plus metadata to class
/// probabilities.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;
    fn classify(&self, features: &Array2<f32>, metadata: &MetadataVector) -> Result<Vec<f64>>;
}

impl Classifier for NetworkParams<f32> {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn classify(&self, features: &Array2<f32>, metadata: &MetadataVector) -> Result<Vec<f64>> {
        let sample = Sample::from_array(features, *metadata, 0);
        // inference mode never draws from the random source
        let probs = forward(self, &sample.spectrogram, metadata, Mode::Infer, &mut RandomSource::new(0))?;
        Ok(probs.into_iter().map(f64::from).collect())
    }
}

/// Start offsets of the analysis windows: every `segment_samples / 2`
/// from 0, ending with the first window that reaches the end.
pub fn segment_starts(len: usize, segment_samples: usize) -> Vec<usize> {
    let step = (segment_samples / 2).max(1);
    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        starts.push(s);
        if s + segment_samples >= len {
            return starts;
        }
        s += step;
    }
}

/// Overlapping windows of `segment_samples`. A window running past the end
/// is filled by looping its own samples.
pub fn segment_recording(samples: &[f32], segment_samples: usize) -> Result<Vec<Vec<f32>>> {
    if samples.is_empty() {
        return Err(Error::Signal("cannot segment an empty recording".into()));
    }
    Ok(segment_starts(samples.len(), segment_samples)
        .into_iter()
        .map(|s| {
            let part = &samples[s..(s + segment_samples).min(samples.len())];
            part.iter().cycle().take(segment_samples).copied().collect()
        })
        .collect())
}

/// Divides by the sum unless it is already within 1e-9 of one, so
/// averaging identical distributions returns them unchanged.
fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 && total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    p
}

/// Per-class arithmetic mean. Each class's values are sorted and averaged
/// as offsets from the smallest, so the result does not depend on the order
/// of `outputs` and identical values average to themselves exactly.
pub fn average_probabilities(outputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = outputs.first() else {
        return Err(Error::Evaluation("nothing to average".into()));
    };
    let k = first.len();
    if outputs.iter().any(|o| o.len() != k) {
        return Err(Error::Shape("probability vectors differ in length".into()));
    }
    let n = outputs.len() as f64;
    let mean = (0..k)
        .map(|c| {
            let mut column: Vec<f64> = outputs.iter().map(|o| o[c]).collect();
            column.sort_by(f64::total_cmp);
            let base = column[0];
            base + column.iter().map(|v| v - base).sum::<f64>() / n
        })
        .collect();
    Ok(renormalize(mean))
}

/// Mean prediction over a recording's overlapping segments.
pub fn predict_recording(
    samples: &[f32],
    metadata: &MetadataVector,
    model: &dyn Classifier,
    extractor: &FeatureExtractor,
    segment_samples: usize,
) -> Result<Vec<f64>> {
    let outputs = segment_recording(samples, segment_samples)?
        .par_iter()
        .map(|seg| model.classify(&extractor.extract(seg)?, metadata))
        .collect::<Result<Vec<_>>>()?;
    average_probabilities(&outputs)
}

/// Predicts every recording of `manifest`. Missing metadata is imputed from
/// the manifest's corpus-wide statistics with a stream derived from
/// `(seed, position)`; the recording's own species is never consulted.
pub fn predict_corpus(
    manifest: &CorpusManifest,
    model: &dyn Classifier,
    extractor: &FeatureExtractor,
    segment_samples: usize,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let stats = compute_species_stats(manifest);
    manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let waveform = decode_audio(&e.audio_path, extractor.sample_rate())?;
            let mut rng = RandomSource::derive(seed, i as u64);
            let meta = metadata_vector_unlabeled(&e.metadata, &stats, &mut rng);
            Ok(Prediction {
                recording_id: e.recording_id.clone(),
                probabilities: predict_recording(&waveform.samples, &meta, model, extractor, segment_samples)?,
            })
        })
        .collect()
}

/// Per-recording, per-class mean over several prediction sets, in the
/// order of the first set.
pub fn ensemble_average(sets: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    let Some(first) = sets.first() else {
        return Err(Error::Evaluation("no prediction sets to ensemble".into()));
    };
    let lookups: Vec<std::collections::HashMap<&str, &Prediction>> = sets
        .iter()
        .map(|s| s.iter().map(|p| (p.recording_id.as_str(), p)).collect())
        .collect();
    for (i, (set, lookup)) in sets.iter().zip(&lookups).enumerate() {
        if set.len() != first.len() || lookup.len() != set.len() {
            return Err(Error::Evaluation(format!(
                "prediction set {i} covers a different set of recordings"
            )));
        }
    }
    first
        .iter()
        .map(|p| {
            let members = lookups
                .iter()
                .map(|l| {
                    l.get(p.recording_id.as_str())
                        .map(|q| q.probabilities.clone())
                        .ok_or_else(|| Error::Evaluation(format!("recording `{}` missing from a set", p.recording_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Prediction {
                recording_id: p.recording_id.clone(),
                probabilities: average_probabilities(&members)
                    .map_err(|_| Error::Evaluation(format!("class counts differ for `{}`", p.recording_id)))?,
            })
        })
        .collect()
}
