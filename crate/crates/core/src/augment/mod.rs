//! Stochastic training augmentations on waveforms and Mel spectrograms.

mod pipeline;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, RandomSource, Result};

pub use pipeline::{augment_pipeline, select_segment, AugmentContext, AugmentReport, SegmentBank, SeparatedRecording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub noise_overlays_max: usize,
    pub noise_overlay_prob: f64,
    pub noise_volume_jitter: f64,
    pub same_class_prob: f64,
    pub same_class_damp_range: [f64; 2],
    pub neighbor_prob: f64,
    pub neighbor_damp_center: f64,
    pub neighbor_damp_jitter: f64,
    pub volume_jitter: f64,
    pub pitch_jitter: f64,
    pub random_cut: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_overlays_max: 4,
            noise_overlay_prob: 0.75,
            noise_volume_jitter: 0.10,
            same_class_prob: 0.70,
            same_class_damp_range: [0.20, 0.60],
            neighbor_prob: 0.30,
            neighbor_damp_center: 0.30,
            neighbor_damp_jitter: 0.05,
            volume_jitter: 0.05,
            pitch_jitter: 0.05,
            random_cut: true,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off: the pipeline reduces to plain
    /// feature extraction of the selected segment.
    pub fn disabled() -> Self {
        Self {
            noise_overlays_max: 0,
            noise_overlay_prob: 0.0,
            noise_volume_jitter: 0.0,
            same_class_prob: 0.0,
            same_class_damp_range: [0.0, 0.0],
            neighbor_prob: 0.0,
            neighbor_damp_center: 0.0,
            neighbor_damp_jitter: 0.0,
            volume_jitter: 0.0,
            pitch_jitter: 0.0,
            random_cut: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("noise_overlay_prob", self.noise_overlay_prob),
            ("same_class_prob", self.same_class_prob),
            ("neighbor_prob", self.neighbor_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, j) in [
            ("noise_volume_jitter", self.noise_volume_jitter),
            ("neighbor_damp_jitter", self.neighbor_damp_jitter),
            ("volume_jitter", self.volume_jitter),
            ("pitch_jitter", self.pitch_jitter),
        ] {
            if !(0.0..1.0).contains(&j) {
                return Err(Error::Config(format!("{name} = {j} outside [0, 1)")));
            }
        }
        let [lo, hi] = self.same_class_damp_range;
        if !(0.0 <= lo && lo <= hi) {
            return Err(Error::Config(format!("same_class_damp_range [{lo}, {hi}] is not a range")));
        }
        if self.neighbor_damp_center < self.neighbor_damp_jitter {
            return Err(Error::Config("neighbor damping may become negative".into()));
        }
        Ok(())
    }
}

fn clip(seg: &mut [f32]) {
    seg.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

/// A window of `len` samples starting at a random offset. Sources shorter
/// than `len` are looped, so every sample comes from `src`.
///
/// Panics if `src` is empty.
pub fn random_window(src: &[f32], len: usize, rng: &mut RandomSource) -> Vec<f32> {
    assert!(!src.is_empty(), "window source is empty");
    if src.len() >= len {
        let start = rng.index(src.len() - len + 1);
        src[start..start + len].to_vec()
    } else {
        let start = rng.index(src.len());
        src.iter().cycle().skip(start).take(len).copied().collect()
    }
}

fn mix_from_pool(seg: &mut [f32], pool: &[&[f32]], factor: f64, rng: &mut RandomSource) {
    let donor = pool[rng.index(pool.len())];
    let add = random_window(donor, seg.len(), rng);
    for (s, a) in seg.iter_mut().zip(add) {
        *s += (factor * f64::from(a)) as f32;
    }
}

/// Outcome of [`overlay_noise`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseOverlayReport {
    /// Volume factor of every overlay that was applied.
    pub factors: Vec<f64>,
    /// Set when the pool had no material, making the call a no-op.
    pub pool_empty: bool,
}

/// Up to `noise_overlays_max` independent attempts, each adding a noise
/// window with probability `noise_overlay_prob` at volume `1 ± jitter`.
pub fn overlay_noise(
    seg: &mut [f32],
    pool: &[&[f32]],
    cfg: &AugmentConfig,
    rng: &mut RandomSource,
) -> NoiseOverlayReport {
    let mut report = NoiseOverlayReport::default();
    if pool.is_empty() {
        report.pool_empty = true;
        return report;
    }
    let j = cfg.noise_volume_jitter;
    for _ in 0..cfg.noise_overlays_max {
        if rng.chance(cfg.noise_overlay_prob) {
            let factor = rng.uniform(1.0 - j, 1.0 + j);
            mix_from_pool(seg, pool, factor, rng);
            report.factors.push(factor);
        }
    }
    clip(seg);
    report
}

/// With probability `same_class_prob`, adds a same-species window damped
/// by a factor drawn from `same_class_damp_range`. Returns that factor.
pub fn combine_same_class(
    seg: &mut [f32],
    pool: &[&[f32]],
    cfg: &AugmentConfig,
    rng: &mut RandomSource,
) -> Option<f64> {
    if pool.is_empty() || !rng.chance(cfg.same_class_prob) {
        return None;
    }
    let [lo, hi] = cfg.same_class_damp_range;
    let factor = rng.uniform(lo, hi);
    mix_from_pool(seg, pool, factor, rng);
    clip(seg);
    Some(factor)
}

/// With probability `neighbor_prob`, adds a window of a species recorded
/// nearby, damped by `neighbor_damp_center ± neighbor_damp_jitter`.
pub fn overlay_neighbor_species(
    seg: &mut [f32],
    pool: &[&[f32]],
    cfg: &AugmentConfig,
    rng: &mut RandomSource,
) -> Option<f64> {
    if pool.is_empty() || !rng.chance(cfg.neighbor_prob) {
        return None;
    }
    let (c, j) = (cfg.neighbor_damp_center, cfg.neighbor_damp_jitter);
    let factor = rng.uniform(c - j, c + j);
    mix_from_pool(seg, pool, factor, rng);
    clip(seg);
    Some(factor)
}

/// Scales the waveform by a factor in `1 ± volume_jitter`.
pub fn volume_shift(seg: &mut [f32], cfg: &AugmentConfig, rng: &mut RandomSource) -> f64 {
    let factor = rng.uniform(1.0 - cfg.volume_jitter, 1.0 + cfg.volume_jitter);
    scale_volume(seg, factor);
    factor
}

pub fn scale_volume(seg: &mut [f32], factor: f64) {
    for s in seg.iter_mut() {
        *s = ((f64::from(*s) * factor) as f32).clamp(-1.0, 1.0);
    }
}

/// Moves columns `c..` in front of columns `..c`.
pub fn rotate_columns(m: &Array2<f32>, c: usize) -> Array2<f32> {
    let frames = m.ncols();
    if frames == 0 {
        return m.clone();
    }
    let c = c % frames;
    Array2::from_shape_fn(m.dim(), |(r, t)| m[[r, (t + c) % frames]])
}

/// Cuts at a uniform point in `[1, frames - 1]` and swaps the two parts.
/// Returns the output and the cut point; fewer than two frames is a no-op.
pub fn random_cut(m: &Array2<f32>, rng: &mut RandomSource) -> (Array2<f32>, usize) {
    if m.ncols() < 2 {
        return (m.clone(), 0);
    }
    let c = rng.range_inclusive(1, m.ncols() - 1);
    (rotate_columns(m, c), c)
}

/// Resamples the band axis so output row `i` reads input position
/// `i * factor` by linear interpolation; positions past the last row are
/// zero.
pub fn rescale_rows(m: &Array2<f32>, factor: f64) -> Array2<f32> {
    let (rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols));
    if rows == 0 {
        return out;
    }
    let last = (rows - 1) as f64;
    for i in 0..rows {
        let pos = i as f64 * factor;
        if pos > last {
            continue;
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        for t in 0..cols {
            let a = f64::from(m[[lo, t]]);
            let v = if frac == 0.0 {
                a
            } else {
                a + frac * (f64::from(m[[lo + 1, t]]) - a)
            };
            out[[i, t]] = v as f32;
        }
    }
    out
}

/// Shifts pitch by a factor in `1 ± pitch_jitter`.
pub fn pitch_shift(m: &Array2<f32>, cfg: &AugmentConfig, rng: &mut RandomSource) -> (Array2<f32>, f64) {
    let factor = rng.uniform(1.0 - cfg.pitch_jitter, 1.0 + cfg.pitch_jitter);
    (rescale_rows(m, factor), factor)
}

#[cfg(test)]
mod tests;
