//! Time-frequency transforms: Hann-windowed STFT, unit normalisation and a
//! log-compressed Mel projection.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::corpus::Waveform;
use crate::{Error, Result};

/// Mel bands fed to the network.
pub const MEL_BANDS: usize = 80;

/// Magnitude spectrogram, `window_size / 2 + 1` rows by frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f32>,
    pub sample_rate: u32,
    pub window_size: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Log-Mel spectrogram with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    /// The `bands + 2` filter corner frequencies in Hz: band `b` rises from
    /// `band_points[b]`, peaks at `band_points[b + 1]` and falls to zero at
    /// `band_points[b + 2]`.
    pub band_points: Vec<f64>,
}

impl MelSpectrogram {
    pub fn bands(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Reusable STFT plan for one window size and hop.
#[derive(Clone)]
pub struct Stft {
    window_size: usize,
    hop: usize,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("window_size", &self.window_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl Stft {
    pub fn new(window_size: usize, hop: usize) -> Result<Self> {
        if !window_size.is_power_of_two() || window_size < 2 {
            return Err(Error::Config(format!(
                "STFT window {window_size} must be a power of two >= 2"
            )));
        }
        if hop == 0 || hop > window_size {
            return Err(Error::Config(format!(
                "STFT hop {hop} must be in 1..={window_size}"
            )));
        }
        let window = hann_window(window_size);
        let fft = FftPlanner::new().plan_fft_forward(window_size);
        Ok(Self {
            window_size,
            hop,
            window,
            fft,
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Number of frames produced for `len` samples: `ceil(len / hop)`.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Magnitude spectrogram of raw samples.
    ///
    /// Frame `t` is centred on sample `t * hop`; the signal is extended by
    /// reflection on both sides.
    pub fn magnitudes(&self, samples: &[f32]) -> Result<Array2<f32>> {
        if samples.is_empty() {
            return Err(Error::Signal("STFT input must hold at least one sample".into()));
        }
        let n = samples.len();
        let frames = self.frame_count(n);
        let bins = self.window_size / 2 + 1;
        let half = (self.window_size / 2) as isize;
        let mut out = Array2::<f32>::zeros((bins, frames));
        let mut buf = vec![Complex::new(0.0f32, 0.0); self.window_size];
        let mut scratch = vec![Complex::new(0.0f32, 0.0); self.fft.get_inplace_scratch_len()];

        for t in 0..frames {
            let start = (t * self.hop) as isize - half;
            let interior = start >= 0 && (start as usize + self.window_size) <= n;
            for (k, slot) in buf.iter_mut().enumerate() {
                let s = if interior {
                    samples[start as usize + k]
                } else {
                    samples[reflect_index(start + k as isize, n)]
                };
                *slot = Complex::new(s * self.window[k], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (b, c) in buf[..bins].iter().enumerate() {
                out[[b, t]] = c.norm();
            }
        }
        Ok(out)
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f32> {
    (0..n)
        .map(|k| {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (0.5 - 0.5 * phase.cos()) as f32
        })
        .collect()
}

/// Maps any integer position onto `0..n` by repeated mirror reflection
/// (edge samples are not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j >= n as isize {
        (period - j) as usize
    } else {
        j as usize
    }
}

/// Magnitude STFT of a waveform.
pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<Spectrogram> {
    let plan = Stft::new(window_size, hop)?;
    Ok(Spectrogram {
        values: plan.magnitudes(&w.samples)?,
        sample_rate: w.sample_rate,
        window_size,
        hop,
    })
}

/// Min-max scaling to `[0, 1]`. A constant matrix maps to all zeros.
pub fn normalize_unit(m: &Array2<f32>) -> Array2<f32> {
    let (lo, hi) = m
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if m.is_empty() || hi <= lo {
        return Array2::zeros(m.raw_dim());
    }
    let span = hi - lo;
    m.mapv(|x| (x - lo) / span)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Corner frequencies of `num_bands` triangular filters spaced uniformly on
/// the Mel scale over `[0, sample_rate / 2]`.
pub fn mel_band_points(num_bands: usize, sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(f64::from(sample_rate) / 2.0);
    (0..num_bands + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (num_bands + 1) as f64))
        .collect()
}

/// Triangular Mel filterbank, `num_bands` rows by `window_size / 2 + 1`
/// bins. Filters peak at 1 and are not area-normalised.
pub fn mel_filterbank(num_bands: usize, window_size: usize, sample_rate: u32) -> Result<Array2<f32>> {
    if num_bands == 0 {
        return Err(Error::Config("mel filterbank needs at least one band".into()));
    }
    let points = mel_band_points(num_bands, sample_rate);
    let bins = window_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / window_size as f64;
    let mut fb = Array2::<f32>::zeros((num_bands, bins));
    for b in 0..num_bands {
        let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
            if w > 0.0 {
                fb[[b, k]] = w as f32;
            }
        }
    }
    Ok(fb)
}

/// Projects a spectrogram onto the 80-band Mel scale, compresses with
/// `ln(1 + x)` and rescales to `[0, 1]`.
pub fn mel_spectrogram(s: &Spectrogram) -> Result<MelSpectrogram> {
    let fb = mel_filterbank(MEL_BANDS, s.window_size, s.sample_rate)?;
    Ok(MelSpectrogram {
        values: log_mel(&fb, &s.values)?,
        band_points: mel_band_points(MEL_BANDS, s.sample_rate),
    })
}

fn log_mel(filterbank: &Array2<f32>, magnitudes: &Array2<f32>) -> Result<Array2<f32>> {
    if filterbank.ncols() != magnitudes.nrows() {
        return Err(Error::Shape(format!(
            "filterbank has {} bins, spectrogram {}",
            filterbank.ncols(),
            magnitudes.nrows()
        )));
    }
    let projected = filterbank.dot(magnitudes);
    Ok(normalize_unit(&projected.mapv(f32::ln_1p)))
}

/// The network's input transform: STFT with `hop = window / 4`, then the
/// log-Mel projection. Holds the plan and filterbank for reuse.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    stft: Stft,
    filterbank: Array2<f32>,
    sample_rate: u32,
}

impl FeatureExtractor {
    pub fn new(fft_window: usize, sample_rate: u32) -> Result<Self> {
        Ok(Self {
            stft: Stft::new(fft_window, fft_window / 4)?,
            filterbank: mel_filterbank(MEL_BANDS, fft_window, sample_rate)?,
            sample_rate,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn hop(&self) -> usize {
        self.stft.hop()
    }

    pub fn extract(&self, samples: &[f32]) -> Result<Array2<f32>> {
        log_mel(&self.filterbank, &self.stft.magnitudes(samples)?)
    }

    pub fn extract_mel(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        Ok(MelSpectrogram {
            values: self.extract(samples)?,
            band_points: mel_band_points(MEL_BANDS, self.sample_rate),
        })
    }
}

/// Fraction of total energy per row; handy for diagnostics and tests.
pub fn row_energy(m: &Array2<f32>) -> Vec<f64> {
    m.axis_iter(Axis(0))
        .map(|row| row.iter().map(|&x| f64::from(x) * f64::from(x)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform::new(samples, 22_050).unwrap()
    }

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f32> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin() as f32).collect()
    }

    #[test]
    fn zero_signal_zero_spectrogram() {
        let s = stft(&wave(vec![0.0; 1000]), 256, 64).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_segment_shapes() {
        let s = stft(&wave(vec![0.1; 32_768]), 256, 64).unwrap();
        assert_eq!(s.values.dim(), (129, 512));
        let s = stft(&wave(vec![0.1; 65_536]), 512, 128).unwrap();
        assert_eq!(s.values.dim(), (257, 512));
    }

    #[test]
    fn bin_centred_sine_peaks_at_its_bin() {
        let rate = 22_050.0;
        let k = 20;
        let x = sine(k as f64 * rate / 256.0, rate, 4096);
        let s = stft(&wave(x.clone()), 256, 64).unwrap();

        // direct DFT of one interior frame as oracle
        let t = 10;
        let start = t * 64 - 128;
        let win = hann_window(256);
        let dft_mag = |bin: usize| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for n in 0..256 {
                let v = f64::from(x[start + n]) * f64::from(win[n]);
                let ph = -2.0 * PI * (bin * n) as f64 / 256.0;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        for bin in 0..129 {
            let got = f64::from(s.values[[bin, t]]);
            assert!((got - dft_mag(bin)).abs() < 1e-3 * (1.0 + got), "bin {bin}");
        }
        // frames whose window lies entirely inside the signal
        for t in 2..s.frames() - 2 {
            let col = s.values.column(t);
            let arg = (0..129).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            assert_eq!(arg, k, "frame {t}");
        }
    }

    #[test]
    fn windowed_sine_energy_concentrated() {
        let rate = 22_050.0;
        for &f in &[440.0, 1234.5, 5000.0, 9876.0] {
            let s = stft(&wave(sine(f, rate, 8192)), 512, 128).unwrap();
            let bin = (f * 512.0 / rate).round() as usize;
            let mut near = 0.0;
            let mut total = 0.0;
            for t in 4..s.frames() - 4 {
                for b in 0..s.bins() {
                    let e = f64::from(s.values[[b, t]]).powi(2);
                    total += e;
                    if b.abs_diff(bin) <= 1 {
                        near += e;
                    }
                }
            }
            assert!(near / total >= 0.9, "{f} Hz: {}", near / total);
        }
    }

    #[test]
    fn single_sample_and_short_inputs() {
        let s = stft(&wave(vec![0.5]), 256, 64).unwrap();
        assert_eq!(s.frames(), 1);
        let s = stft(&wave(vec![0.5, -0.5, 0.25]), 256, 64).unwrap();
        assert_eq!(s.frames(), 1);
        assert!(Stft::new(256, 64).unwrap().magnitudes(&[]).is_err());
        assert!(Stft::new(250, 64).is_err());
        assert!(Stft::new(256, 0).is_err());
    }

    #[test]
    fn reflection_mirrors_without_repeating_edges() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn normalize_examples() {
        let m = array![[0.0f32, 5.0], [10.0, 5.0]];
        assert_eq!(normalize_unit(&m), array![[0.0f32, 0.5], [1.0, 0.5]]);
        let c = Array2::from_elem((3, 4), 7.0f32);
        assert!(normalize_unit(&c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn narrow_fft_leaves_empty_mel_bands() {
        let fb = mel_filterbank(80, 256, 22_050).unwrap();
        let empty = fb.rows().into_iter().filter(|r| r.iter().all(|&v| v == 0.0)).count();
        assert!(empty > 0);
    }

    #[test]
    fn wide_fft_fills_every_mel_band() {
        let fb = mel_filterbank(80, 512, 22_050).unwrap();
        // construction oracle: each open interval (lo, hi) must contain a bin
        let points = mel_band_points(80, 22_050);
        let bin_hz = 22_050.0 / 512.0;
        for b in 0..80 {
            let has_bin = (0..257).any(|k| {
                let f = k as f64 * bin_hz;
                f > points[b] && f < points[b + 2]
            });
            assert!(has_bin, "band {b}");
            assert!(fb.row(b).iter().any(|&v| v > 0.0), "band {b}");
        }
        assert!(fb.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn filterbank_is_linear_on_ones() {
        let fb = mel_filterbank(80, 512, 22_050).unwrap();
        let ones = Array2::<f32>::ones((257, 1));
        let out = fb.dot(&ones);
        for b in 0..80 {
            let total: f32 = fb.row(b).sum();
            assert!((out[[b, 0]] - total).abs() < 1e-4);
        }
    }

    #[test]
    fn mel_spectrogram_shapes_and_zero() {
        let zero = Spectrogram {
            values: Array2::zeros((129, 512)),
            sample_rate: 22_050,
            window_size: 256,
            hop: 64,
        };
        let m = mel_spectrogram(&zero).unwrap();
        assert_eq!(m.values.dim(), (80, 512));
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(m.band_points.len(), 82);
    }

    proptest! {
        #[test]
        fn frame_count_is_ceil(len in 1usize..5000, hop_pow in 0u32..4) {
            let hop = 64 >> hop_pow;
            let s = Stft::new(256, hop).unwrap();
            let m = s.magnitudes(&vec![0.1; len]).unwrap();
            prop_assert_eq!(m.ncols(), len.div_ceil(hop));
        }

        #[test]
        fn mel_output_in_unit_range_and_order_preserving(
            seed in any::<u64>(),
        ) {
            let mut rng = crate::RandomSource::new(seed);
            let values = Array2::from_shape_fn((129, 24), |_| (rng.unit() * 5.0) as f32);
            let s = Spectrogram { values: values.clone(), sample_rate: 22_050, window_size: 256, hop: 64 };
            let doubled = Spectrogram { values: values.mapv(|v| 2.0 * v), ..s.clone() };
            let a = mel_spectrogram(&s).unwrap().values;
            let b = mel_spectrogram(&doubled).unwrap().values;
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
            let (av, bv): (Vec<f32>, Vec<f32>) = (a.iter().copied().collect(), b.iter().copied().collect());
            for i in (0..av.len()).step_by(7) {
                for j in (0..av.len()).step_by(13) {
                    if av[i] < av[j] - 1e-5 {
                        prop_assert!(bv[i] <= bv[j], "order flipped at {} {}", i, j);
                    }
                }
            }
        }
    }
}
