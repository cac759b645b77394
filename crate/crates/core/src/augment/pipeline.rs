use ndarray::Array2;

use super::{
    combine_same_class, overlay_neighbor_species, overlay_noise, pitch_shift, random_cut, random_window,
    volume_shift, AugmentConfig,
};
use crate::corpus::{CorpusManifest, NeighborIndex, Waveform};
use crate::dsp::FeatureExtractor;
use crate::segmentation::SegmentationResult;
use crate::{Error, RandomSource, Result};

/// The sound and noise samples of one recording.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeparatedRecording {
    pub sound: Vec<f32>,
    pub noise: Vec<f32>,
}

impl SeparatedRecording {
    pub fn from_segmentation(waveform: &Waveform, seg: &SegmentationResult) -> Self {
        Self {
            sound: SegmentationResult::gather(&seg.sound_mask, &waveform.samples),
            noise: SegmentationResult::gather(&seg.noise_mask, &waveform.samples),
        }
    }
}

/// Separated audio for every recording of a manifest, in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentBank {
    pub recordings: Vec<SeparatedRecording>,
}

impl SegmentBank {
    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }
}

/// Donor pools derived from a manifest and its segment bank.
#[derive(Debug)]
pub struct AugmentContext<'a> {
    bank: &'a SegmentBank,
    species: Vec<usize>,
    by_species: Vec<Vec<usize>>,
    neighbor_species: Vec<Vec<usize>>,
    noise_donors: Vec<usize>,
}

impl<'a> AugmentContext<'a> {
    pub fn new(manifest: &CorpusManifest, bank: &'a SegmentBank, neighbors: &NeighborIndex) -> Result<Self> {
        if manifest.len() != bank.len() {
            return Err(Error::Shape(format!(
                "{} manifest entries but {} separated recordings",
                manifest.len(),
                bank.len()
            )));
        }
        let species: Vec<usize> = manifest.entries.iter().map(|e| e.species_id()).collect();
        let mut by_species = vec![Vec::new(); manifest.num_species];
        for (i, r) in bank.recordings.iter().enumerate() {
            if !r.sound.is_empty() {
                by_species[species[i]].push(i);
            }
        }
        let neighbor_species = manifest
            .entries
            .iter()
            .map(|e| neighbors.neighbors(&e.recording_id).iter().copied().collect())
            .collect();
        let noise_donors = (0..bank.len()).filter(|&i| !bank.recordings[i].noise.is_empty()).collect();
        Ok(Self {
            bank,
            species,
            by_species,
            neighbor_species,
            noise_donors,
        })
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }

    pub fn sound(&self, recording: usize) -> &[f32] {
        &self.bank.recordings[recording].sound
    }

    /// Sound material of the other recordings of the same species.
    pub fn same_class_pool(&self, recording: usize) -> Vec<&[f32]> {
        self.by_species[self.species[recording]]
            .iter()
            .filter(|&&i| i != recording)
            .map(|&i| self.sound(i))
            .collect()
    }

    /// Sound material of every recording of a species found near
    /// `recording`.
    pub fn neighbor_pool(&self, recording: usize) -> Vec<&[f32]> {
        self.neighbor_species[recording]
            .iter()
            .filter_map(|&s| self.by_species.get(s))
            .flatten()
            .map(|&i| self.sound(i))
            .collect()
    }

    pub fn noise_pool(&self) -> Vec<&[f32]> {
        self.noise_donors
            .iter()
            .map(|&i| self.bank.recordings[i].noise.as_slice())
            .collect()
    }
}

/// A random window of `segment_samples` from a recording's sound samples,
/// looping them when they are shorter.
pub fn select_segment(sound: &[f32], segment_samples: usize, rng: &mut RandomSource) -> Result<Vec<f32>> {
    if sound.is_empty() {
        return Err(Error::Signal("recording has no sound samples".into()));
    }
    Ok(random_window(sound, segment_samples, rng))
}

/// What the pipeline did to one segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentReport {
    pub same_class_factor: Option<f64>,
    pub neighbor_factor: Option<f64>,
    pub noise_factors: Vec<f64>,
    pub volume_factor: f64,
    pub pitch_factor: f64,
    pub cut: usize,
}

/// Draws a training segment of `recording` and runs every augmentation:
/// same-class mix, neighbor-species mix, noise overlays, volume, Mel
/// features, pitch shift and random cut, in that order.
pub fn augment_pipeline(
    ctx: &AugmentContext<'_>,
    recording: usize,
    extractor: &FeatureExtractor,
    segment_samples: usize,
    cfg: &AugmentConfig,
    rng: &mut RandomSource,
) -> Result<(Array2<f32>, AugmentReport)> {
    let mut seg = select_segment(ctx.sound(recording), segment_samples, rng)?;
    let mut report = AugmentReport {
        same_class_factor: combine_same_class(&mut seg, &ctx.same_class_pool(recording), cfg, rng),
        neighbor_factor: overlay_neighbor_species(&mut seg, &ctx.neighbor_pool(recording), cfg, rng),
        noise_factors: overlay_noise(&mut seg, &ctx.noise_pool(), cfg, rng).factors,
        volume_factor: volume_shift(&mut seg, cfg, rng),
        ..AugmentReport::default()
    };
    let mel = extractor.extract(&seg)?;
    let (mel, pitch) = pitch_shift(&mel, cfg, rng);
    report.pitch_factor = pitch;
    let mel = if cfg.random_cut {
        let (m, cut) = random_cut(&mel, rng);
        report.cut = cut;
        m
    } else {
        mel
    };
    Ok((mel, report))
}
