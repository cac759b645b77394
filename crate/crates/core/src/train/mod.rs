//! Batch composition, the optimization loop and checkpoints.

mod cache;
mod checkpoint;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pipeline, AugmentConfig, AugmentContext, SegmentBank};
use crate::corpus::{build_neighbor_index, CorpusManifest};
use crate::dsp::FeatureExtractor;
use crate::metadata::{compute_species_stats, metadata_vector, SpeciesAttributeStats};
use crate::net::{batch_gradients, sgd_nesterov_step, Mode, NetworkParams, Sample};
use crate::{Error, RandomSource, Result};

pub use cache::{check_mask_names, load_segment_bank, mask_file_name, mask_path, segment_entry};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// Supported `(fft_window, segment_samples)` pairs. Both give 512 frames at
/// a hop of a quarter window.
pub const FEATURE_CONFIGS: [(usize, usize); 2] = [(256, 32768), (512, 65536)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub fft_window: usize,
    pub segment_samples: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_interval: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            fft_window: 256,
            segment_samples: 32768,
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 30,
            seed: 0,
            checkpoint_interval: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !FEATURE_CONFIGS.contains(&(self.fft_window, self.segment_samples)) {
            return Err(Error::Config(format!(
                "fft_window {} with segment_samples {} is not a supported pair (256/32768 or 512/65536)",
                self.fft_window, self.segment_samples
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.fft_window / 4
    }
}

/// Everything batch composition reads: the training split, its separated
/// audio, donor pools, metadata statistics and the feature extractor.
#[derive(Debug)]
pub struct TrainingData<'a> {
    manifest: &'a CorpusManifest,
    context: AugmentContext<'a>,
    stats: SpeciesAttributeStats,
    extractor: FeatureExtractor,
}

impl<'a> TrainingData<'a> {
    pub fn new(manifest: &'a CorpusManifest, bank: &'a SegmentBank, fft_window: usize, sample_rate: u32) -> Result<Self> {
        let neighbors = build_neighbor_index(manifest);
        Ok(Self {
            manifest,
            context: AugmentContext::new(manifest, bank, &neighbors)?,
            stats: compute_species_stats(manifest),
            extractor: FeatureExtractor::new(fft_window, sample_rate)?,
        })
    }

    pub fn manifest(&self) -> &CorpusManifest {
        self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn stats(&self) -> &SpeciesAttributeStats {
        &self.stats
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }
}

/// One training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Manifest positions of the drawn recordings.
    pub recordings: Vec<usize>,
    pub samples: Vec<Sample<f32>>,
    /// Seeds of the per-example dropout streams.
    pub dropout_seeds: Vec<u64>,
}

/// Draws `batch_size` recordings uniformly with replacement and builds an
/// augmented example from each. Every example has its own random stream
/// seeded from `rng`, so examples are assembled in parallel without
/// affecting the result.
pub fn compose_batch(
    data: &TrainingData<'_>,
    augment: &AugmentConfig,
    cfg: &TrainingConfig,
    rng: &mut RandomSource,
) -> Result<Batch> {
    if data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut recordings = Vec::with_capacity(cfg.batch_size);
    let mut example_seeds = Vec::with_capacity(cfg.batch_size);
    let mut dropout_seeds = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        recordings.push(rng.index(data.len()));
        example_seeds.push(rng.next_u64());
        dropout_seeds.push(rng.next_u64());
    }
    let samples = recordings
        .par_iter()
        .zip(&example_seeds)
        .map(|(&r, &seed)| {
            let mut ex_rng = RandomSource::new(seed);
            let (mel, _) = augment_pipeline(&data.context, r, &data.extractor, cfg.segment_samples, augment, &mut ex_rng)?;
            let md = &data.manifest.entries[r].metadata;
            let meta = metadata_vector(md, &data.stats, &mut ex_rng);
            Ok(Sample::from_array(&mel, meta, md.species_id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        recordings,
        samples,
        dropout_seeds,
    })
}

/// Number of batches per epoch: `ceil(training files / batch size)`.
pub fn batches_per_epoch(files: usize, batch_size: usize) -> usize {
    files.div_ceil(batch_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batch_losses: Vec<f64>,
}

/// Runs one epoch. The random stream is derived from `(cfg.seed, epoch)`,
/// so resuming at any epoch reproduces an uninterrupted run.
pub fn train_epoch(
    params: &mut NetworkParams<f32>,
    data: &TrainingData<'_>,
    augment: &AugmentConfig,
    cfg: &TrainingConfig,
    epoch: usize,
) -> Result<EpochSummary> {
    let mut rng = RandomSource::derive(cfg.seed, epoch as u64);
    let batches = batches_per_epoch(data.len(), cfg.batch_size);
    let mut batch_losses = Vec::with_capacity(batches);
    for b in 0..batches {
        let batch = compose_batch(data, augment, cfg, &mut rng)?;
        let (losses, grads) = batch_gradients(params, &batch.samples, &batch.dropout_seeds, Mode::Train)?;
        let mean = losses.iter().map(|&l| f64::from(l)).sum::<f64>() / losses.len() as f64;
        if !mean.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
            let ids: Vec<&str> = batch
                .recordings
                .iter()
                .map(|&r| data.manifest.entries[r].recording_id.as_str())
                .collect();
            return Err(Error::NonFiniteLoss {
                batch: b,
                recordings: ids.join(", "),
            });
        }
        sgd_nesterov_step(params, &grads, cfg.learning_rate, cfg.momentum)?;
        batch_losses.push(mean);
    }
    let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;
    Ok(EpochSummary {
        epoch,
        mean_loss,
        batch_losses,
    })
}

/// CSV header of the training log.
pub const LOG_HEADER: &str = "epoch,mean_loss,val_map,elapsed_s";

/// One training-log line; `val_map` is left empty when no validation split
/// exists.
pub fn log_line(epoch: usize, mean_loss: f64, val_map: Option<f64>, elapsed_s: f64) -> String {
    let map = val_map.map(|m| format!("{m:.6}")).unwrap_or_default();
    format!("{epoch},{mean_loss:.6},{map},{elapsed_s:.3}")
}
