//! Sound / noise / irrelevant separation by median clipping.
//!
//! A normalised spectrogram is binarised against multiples of its row and
//! column medians, cleaned with a 4×4 opening (erosion then dilation),
//! reduced to a per-frame indicator, widened, and stretched back to sample
//! resolution. The sound factor is lowered in steps until the sound region
//! is long enough for one training segment.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::Waveform;
use crate::dsp::{normalize_unit, Stft};
use crate::{Error, Result};

/// Binary image with values in `{0, 1}`.
pub type BinaryMask = Array2<u8>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Morphology {
    Erode,
    Dilate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub sound_factor: f64,
    pub noise_factor: f64,
    pub struct_size: usize,
    pub indicator_dilations: usize,
    pub threshold_step: f64,
    pub min_sound_samples: usize,
    pub window_size: usize,
    /// 74% overlap of a 512 window.
    pub hop: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            sound_factor: 3.0,
            noise_factor: 2.5,
            struct_size: 4,
            indicator_dilations: 2,
            threshold_step: 0.1,
            min_sound_samples: 32_768,
            window_size: 512,
            hop: 133,
        }
    }
}

/// Lowest sound factor tried before the whole recording is marked as sound.
pub const THRESHOLD_FLOOR: f64 = 1.0;

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sound_factor > self.noise_factor && self.noise_factor > 0.0) {
            return Err(Error::Config(format!(
                "need sound_factor > noise_factor > 0 (got {} and {})",
                self.sound_factor, self.noise_factor
            )));
        }
        if self.struct_size == 0 {
            return Err(Error::Config("struct_size must be positive".into()));
        }
        if !(self.threshold_step > 0.0) {
            return Err(Error::Config("threshold_step must be positive".into()));
        }
        Stft::new(self.window_size, self.hop).map(|_| ())
    }
}

/// Per-sample sound and noise masks of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub sound_mask: Vec<u8>,
    pub noise_mask: Vec<u8>,
    pub sound_threshold_used: f64,
}

impl SegmentationResult {
    pub fn len(&self) -> usize {
        self.sound_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sound_mask.is_empty()
    }

    pub fn sound_count(&self) -> usize {
        self.sound_mask.iter().filter(|&&v| v == 1).count()
    }

    pub fn noise_count(&self) -> usize {
        self.noise_mask.iter().filter(|&&v| v == 1).count()
    }

    /// Samples that are neither sound nor noise.
    pub fn irrelevant_mask(&self) -> Vec<u8> {
        self.sound_mask
            .iter()
            .zip(&self.noise_mask)
            .map(|(&s, &n)| u8::from(s == 0 && n == 0))
            .collect()
    }

    /// Copies the masked samples of `samples` into one contiguous buffer.
    pub fn gather(mask: &[u8], samples: &[f32]) -> Vec<f32> {
        mask.iter()
            .zip(samples)
            .filter(|(&m, _)| m == 1)
            .map(|(_, &s)| s)
            .collect()
    }

    /// Text form: sample count, threshold, then run-length encoded masks as
    /// half-open `start-end` ranges.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples: {}", self.len());
        let _ = writeln!(out, "threshold: {}", self.sound_threshold_used);
        let _ = writeln!(out, "sound: {}", format_runs(&mask_runs(&self.sound_mask)));
        let _ = writeln!(out, "noise: {}", format_runs(&mask_runs(&self.noise_mask)));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut samples = None;
        let mut threshold = None;
        let mut sound = None;
        let mut noise = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Cache(format!("malformed line `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "samples" => {
                    samples = Some(value.parse::<usize>().map_err(|e| Error::Cache(e.to_string()))?)
                }
                "threshold" => {
                    threshold = Some(value.parse::<f64>().map_err(|e| Error::Cache(e.to_string()))?)
                }
                "sound" => sound = Some(parse_runs(value)?),
                "noise" => noise = Some(parse_runs(value)?),
                other => return Err(Error::Cache(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Cache(format!("missing `{k}`"));
        let n = samples.ok_or_else(|| missing("samples"))?;
        let result = Self {
            sound_mask: runs_to_mask(&sound.ok_or_else(|| missing("sound"))?, n)?,
            noise_mask: runs_to_mask(&noise.ok_or_else(|| missing("noise"))?, n)?,
            sound_threshold_used: threshold.ok_or_else(|| missing("threshold"))?,
        };
        if result
            .sound_mask
            .iter()
            .zip(&result.noise_mask)
            .any(|(&s, &n)| s == 1 && n == 1)
        {
            return Err(Error::Cache("sound and noise runs overlap".into()));
        }
        Ok(result)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
    }
}

/// Half-open runs of ones.
pub fn mask_runs(mask: &[u8]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in mask.iter().enumerate() {
        match (v == 1, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len()));
    }
    runs
}

fn format_runs(runs: &[(usize, usize)]) -> String {
    runs.iter()
        .map(|(a, b)| format!("{a}-{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_runs(s: &str) -> Result<Vec<(usize, usize)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|r| {
            let (a, b) = r
                .split_once('-')
                .ok_or_else(|| Error::Cache(format!("bad run `{r}`")))?;
            let a = a.trim().parse().map_err(|_| Error::Cache(format!("bad run `{r}`")))?;
            let b = b.trim().parse().map_err(|_| Error::Cache(format!("bad run `{r}`")))?;
            Ok((a, b))
        })
        .collect()
}

fn runs_to_mask(runs: &[(usize, usize)], n: usize) -> Result<Vec<u8>> {
    let mut mask = vec![0u8; n];
    for &(a, b) in runs {
        if a >= b || b > n {
            return Err(Error::Cache(format!("run {a}-{b} outside 0-{n}")));
        }
        mask[a..b].fill(1);
    }
    Ok(mask)
}

/// Median of a slice, averaging the two middle values for even lengths.
fn median(values: &mut [f32]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let (_, &mut hi, _) = values.select_nth_unstable_by(n / 2, f32::total_cmp);
    if n % 2 == 1 {
        f64::from(hi)
    } else {
        let lo = values[..n / 2].iter().copied().fold(f32::NEG_INFINITY, f32::max);
        (f64::from(lo) + f64::from(hi)) / 2.0
    }
}

/// Row and column medians of a spectrogram; they do not depend on the
/// clipping factor, so threshold search reuses them.
#[derive(Debug, Clone)]
pub struct MedianProfile {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl MedianProfile {
    pub fn new(s: &Array2<f32>) -> Self {
        let mut buf = Vec::new();
        let mut line_median = |line: ArrayView1<f32>| {
            buf.clear();
            buf.extend(line.iter().copied());
            median(&mut buf)
        };
        let rows = s.axis_iter(Axis(0)).map(&mut line_median).collect();
        let cols = s.axis_iter(Axis(1)).map(&mut line_median).collect();
        Self { rows, cols }
    }

    /// Pixels strictly above `factor` times both their row and column median.
    pub fn clip(&self, s: &Array2<f32>, factor: f64) -> BinaryMask {
        let row_t: Vec<f64> = self.rows.iter().map(|m| factor * m).collect();
        let col_t: Vec<f64> = self.cols.iter().map(|m| factor * m).collect();
        Array2::from_shape_fn(s.raw_dim(), |(r, c)| {
            let v = f64::from(s[[r, c]]);
            u8::from(v > row_t[r] && v > col_t[c])
        })
    }
}

pub fn median_clip_mask(s: &Array2<f32>, factor: f64) -> BinaryMask {
    MedianProfile::new(s).clip(s, factor)
}

/// Offsets `[-before, after]` covered by a `size`-wide flat element anchored
/// at index 1. Dilation uses the reflected element.
fn element_extent(size: usize, kind: Morphology) -> (usize, usize) {
    let anchor = 1.min(size - 1);
    let (before, after) = (anchor, size - 1 - anchor);
    match kind {
        Morphology::Erode => (before, after),
        Morphology::Dilate => (after, before),
    }
}

/// 1-D flat erosion/dilation along a line using a running count.
/// Out-of-range positions count as 0.
fn morph_line(input: &[u8], output: &mut [u8], before: usize, after: usize, kind: Morphology) {
    let n = input.len();
    let width = before + after + 1;
    // count of ones in [i - before, i + after] ∩ [0, n)
    let mut count: usize = input[..after.min(n)].iter().map(|&v| usize::from(v)).sum();
    for i in 0..n {
        if i + after < n {
            count += usize::from(input[i + after]);
        }
        if i > before {
            count -= usize::from(input[i - before - 1]);
        }
        output[i] = match kind {
            Morphology::Erode => u8::from(count == width),
            Morphology::Dilate => u8::from(count > 0),
        };
    }
}

/// Binary erosion or dilation with an all-ones `struct_size` square element
/// anchored at (1, 1). Pixels outside the image are 0 for both operations.
///
/// The element is separable, so this runs as a row pass then a column pass.
pub fn morph_binary(m: &BinaryMask, kind: Morphology, struct_size: usize) -> BinaryMask {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 || struct_size == 0 {
        return m.clone();
    }
    let (before, after) = element_extent(struct_size, kind);

    let mut horizontal = Array2::<u8>::zeros((rows, cols));
    let mut line_out = vec![0u8; rows.max(cols)];
    let mut line_in = vec![0u8; rows.max(cols)];
    for r in 0..rows {
        line_in[..cols].iter_mut().zip(m.row(r)).for_each(|(d, &s)| *d = s);
        morph_line(&line_in[..cols], &mut line_out[..cols], before, after, kind);
        horizontal.row_mut(r).iter_mut().zip(&line_out[..cols]).for_each(|(d, &s)| *d = s);
    }
    let mut out = Array2::<u8>::zeros((rows, cols));
    for c in 0..cols {
        line_in[..rows].iter_mut().zip(horizontal.column(c)).for_each(|(d, &s)| *d = s);
        morph_line(&line_in[..rows], &mut line_out[..rows], before, after, kind);
        out.column_mut(c).iter_mut().zip(&line_out[..rows]).for_each(|(d, &s)| *d = s);
    }
    out
}

/// Erosion followed by dilation.
pub fn open_mask(m: &BinaryMask, struct_size: usize) -> BinaryMask {
    morph_binary(&morph_binary(m, Morphology::Erode, struct_size), Morphology::Dilate, struct_size)
}

/// 1 for every column holding at least one 1.
pub fn frame_indicator(m: &BinaryMask) -> Vec<u8> {
    m.axis_iter(Axis(1))
        .map(|col| u8::from(col.iter().any(|&v| v == 1)))
        .collect()
}

/// `times` passes of 1-D dilation with a `[1, 1, 1]` element.
pub fn dilate_indicator(v: &[u8], times: usize) -> Vec<u8> {
    let mut cur = v.to_vec();
    let mut next = vec![0u8; v.len()];
    for _ in 0..times {
        morph_line(&cur, &mut next, 1, 1, Morphology::Dilate);
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Sample `i` takes the value of frame `floor(i / hop)`, clamped to the last
/// frame.
pub fn indicator_to_sample_mask(v: &[u8], hop: usize, total_samples: usize) -> Vec<u8> {
    if v.is_empty() {
        return vec![0; total_samples];
    }
    let last = v.len() - 1;
    (0..total_samples).map(|i| v[(i / hop).min(last)]).collect()
}

/// Segments a unit-normalised spectrogram computed with hop `hop` from a
/// recording of `total_samples` samples.
///
/// Sound frames come from the sound-factor clip. Noise frames are the frames
/// whose noise-factor clip is empty after opening, minus sound frames, so
/// frames with energy between the two factors end up irrelevant.
pub fn separate_spectrogram(
    s: &Array2<f32>,
    hop: usize,
    total_samples: usize,
    cfg: &SegmentationConfig,
) -> SegmentationResult {
    let profile = MedianProfile::new(s);
    let target = cfg.min_sound_samples.min(total_samples);

    let noise_clip = open_mask(&profile.clip(s, cfg.noise_factor), cfg.struct_size);
    let loud_frames = frame_indicator(&noise_clip);

    let mut step = 0usize;
    let (sound_mask, threshold) = loop {
        let factor = lowered_factor(cfg, step);
        let opened = open_mask(&profile.clip(s, factor), cfg.struct_size);
        let frames = dilate_indicator(&frame_indicator(&opened), cfg.indicator_dilations);
        let mask = indicator_to_sample_mask(&frames, hop, total_samples);
        let count = mask.iter().filter(|&&v| v == 1).count();
        if count >= target && count > 0 {
            break (mask, factor);
        }
        if factor <= THRESHOLD_FLOOR {
            break (vec![1u8; total_samples], THRESHOLD_FLOOR);
        }
        step += 1;
    };

    let quiet: Vec<u8> = loud_frames.iter().map(|&v| 1 - v).collect();
    let quiet_samples = indicator_to_sample_mask(&quiet, hop, total_samples);
    let noise_mask = quiet_samples
        .iter()
        .zip(&sound_mask)
        .map(|(&q, &s)| u8::from(q == 1 && s == 0))
        .collect();

    SegmentationResult {
        sound_mask,
        noise_mask,
        sound_threshold_used: threshold,
    }
}

/// `sound_factor - step * threshold_step`, floored and rounded to 1e-9 so
/// repeated steps of 0.1 report as 2.9, 2.8, ...
pub fn lowered_factor(cfg: &SegmentationConfig, step: usize) -> f64 {
    let f = cfg.sound_factor - step as f64 * cfg.threshold_step;
    ((f * 1e9).round() / 1e9).max(THRESHOLD_FLOOR)
}

/// Full segmentation of a recording.
pub fn separate_recording(w: &Waveform, cfg: &SegmentationConfig) -> Result<SegmentationResult> {
    cfg.validate()?;
    let plan = Stft::new(cfg.window_size, cfg.hop)?;
    let spec = normalize_unit(&plan.magnitudes(&w.samples)?);
    Ok(separate_spectrogram(&spec, cfg.hop, w.len(), cfg))
}
