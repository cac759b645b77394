//! Generator for small synthetic corpora: each species sings a distinct
//! tone pattern over a noise bed.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::{write_wav, Waveform};
use crate::{Error, RandomSource, Result};

/// Number of distinct call patterns available.
pub const PATTERNS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub species: usize,
    pub recordings_per_species: usize,
    pub sample_rate: u32,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            species: PATTERNS,
            recordings_per_species: 20,
            sample_rate: 22050,
            min_seconds: 1.5,
            max_seconds: 3.0,
            seed: 0,
        }
    }
}

/// Instantaneous frequency of `pattern` at fraction `t ∈ [0, 1)` of a call.
fn call_frequency(pattern: usize, t: f64) -> f64 {
    match pattern % PATTERNS {
        // steady whistle
        0 => 2000.0,
        // rising sweep
        1 => 3000.0 + 3000.0 * t,
        // two alternating notes
        _ => {
            if (t * 4.0).floor() as usize % 2 == 0 {
                1200.0
            } else {
                4500.0
            }
        }
    }
}

/// One recording of `species`: calls of 0.15–0.3 s separated by gaps of
/// 0.1–0.4 s over a white-noise bed.
pub fn synthesize_recording(species: usize, spec: &SyntheticSpec, rng: &mut RandomSource) -> Vec<f32> {
    let rate = f64::from(spec.sample_rate);
    let seconds = rng.uniform(spec.min_seconds, spec.max_seconds);
    let len = (seconds * rate) as usize;
    let bed = rng.uniform(0.01, 0.04);
    let mut samples: Vec<f64> = (0..len).map(|_| bed * rng.uniform(-1.0, 1.0)).collect();

    let mut pos = (rng.uniform(0.05, 0.3) * rate) as usize;
    while pos < len {
        let call = (rng.uniform(0.15, 0.3) * rate) as usize;
        let amp = rng.uniform(0.3, 0.6);
        let detune = rng.uniform(0.97, 1.03);
        let mut phase = 0.0;
        for i in 0..call.min(len - pos) {
            let t = i as f64 / call as f64;
            phase += TAU * call_frequency(species, t) * detune / rate;
            // raised-cosine envelope
            let env = 0.5 - 0.5 * (TAU * t).cos();
            samples[pos + i] += amp * env * phase.sin();
        }
        pos += call + (rng.uniform(0.1, 0.4) * rate) as usize;
    }
    samples.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect()
}

/// Writes `species × recordings_per_species` WAV files and a manifest to
/// `dir`, returning the manifest path. Species are placed in separate
/// regions; some recordings omit coordinates, elevation or time.
pub fn generate_corpus(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    if spec.species == 0 || spec.species > PATTERNS {
        return Err(Error::Config(format!("synthetic corpora support 1..={PATTERNS} species")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = RandomSource::new(spec.seed);
    let mut manifest = String::from("recording_id,audio_path,species_id,latitude,longitude,elevation,date,time\n");
    for r in 0..spec.recordings_per_species {
        for species in 0..spec.species {
            let id = format!("s{species}_{r:03}");
            let samples = synthesize_recording(species, spec, &mut rng);
            write_wav(&dir.join(format!("{id}.wav")), &Waveform::new(samples, spec.sample_rate)?)?;

            let cell = |present: bool, v: String| if present { v } else { String::new() };
            let has_coords = rng.chance(0.8);
            let lat = 40.0 + 5.0 * species as f64 + rng.uniform(-1.5, 1.5);
            let lon = -5.0 + 8.0 * species as f64 + rng.uniform(-1.5, 1.5);
            let elev = 100.0 + 400.0 * species as f64 + rng.uniform(0.0, 300.0);
            let day = 1 + rng.index(28);
            let month = 3 + rng.index(4);
            let minutes = 240 + 120 * species + rng.index(180);
            let _ = writeln!(
                manifest,
                "{id},{id}.wav,{species},{},{},{},{},{}",
                cell(has_coords, format!("{lat:.4}")),
                cell(has_coords, format!("{lon:.4}")),
                cell(rng.chance(0.7), format!("{elev:.1}")),
                cell(rng.chance(0.9), format!("2017-{month:02}-{day:02}")),
                cell(rng.chance(0.8), format!("{:02}:{:02}", minutes / 60, minutes % 60)),
            );
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
