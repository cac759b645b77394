use std::path::Path;

use rubato::{FftFixedInOut, Resampler};

use crate::{Error, Result};

/// Canonical analysis rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 22_050;

const I16_SCALE: f32 = 32_768.0;
const RESAMPLE_CHUNK: usize = 1024;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Signal("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Signal("waveform must hold at least one sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Decodes a PCM WAV file (16-bit integer or 32-bit float) to mono at
/// `target_rate`. Multi-channel audio is collapsed by channel mean.
pub fn decode_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(Error::CorruptHeader(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / I16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{}: {bits}-bit {fmt:?} PCM",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() || interleaved.len() % channels != 0 {
        return Err(Error::CorruptHeader(format!(
            "{}: {} samples for {channels} channel(s)",
            path.display(),
            interleaved.len()
        )));
    }

    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        let inv = 1.0 / channels as f32;
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() * inv)
            .collect()
    };

    let samples = if spec.sample_rate == target_rate {
        mono
    } else {
        let mut out = resample(&mono, spec.sample_rate, target_rate)?;
        for s in &mut out {
            *s = s.clamp(-1.0, 1.0);
        }
        out
    };
    Waveform::new(samples, target_rate)
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => {
            Error::UnsupportedCodec(format!("{}: unsupported WAV encoding", path.display()))
        }
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::io(path, io)
        }
        other => Error::CorruptHeader(format!("{}: {other}", path.display())),
    }
}

/// Band-limited FFT resampling; output length is `ceil(len * to / from)`.
fn resample(input: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    let mut resampler = FftFixedInOut::<f32>::new(from as usize, to as usize, RESAMPLE_CHUNK, 1)
        .map_err(|e| Error::Resample(e.to_string()))?;
    let expected = (input.len() as u64 * u64::from(to)).div_ceil(u64::from(from)) as usize;
    let delay = resampler.output_delay();

    let mut out = Vec::with_capacity(expected + delay + 2 * RESAMPLE_CHUNK);
    let mut pos = 0;
    let mut chunk = Vec::new();
    while out.len() < expected + delay {
        let need = resampler.input_frames_next();
        chunk.clear();
        let end = (pos + need).min(input.len());
        if pos < end {
            chunk.extend_from_slice(&input[pos..end]);
        }
        chunk.resize(need, 0.0);
        pos += need;
        let produced = resampler
            .process(&[&chunk[..]], None)
            .map_err(|e| Error::Resample(e.to_string()))?;
        out.extend_from_slice(&produced[0]);
    }
    out.drain(..delay);
    out.truncate(expected);
    Ok(out)
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Signal(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &waveform.samples {
        let v = (s.clamp(-1.0, 1.0) * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
