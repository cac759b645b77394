use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use birdsong::augment::AugmentConfig;
use birdsong::corpus::DEFAULT_SAMPLE_RATE;
use birdsong::infer::MapMode;
use birdsong::net::NetworkConfig;
use birdsong::segmentation::SegmentationConfig;
use birdsong::train::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::Usage;

/// How much of the manifest is used for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainSplit {
    Full,
    Fraction(f64),
}

impl TrainSplit {
    pub fn validation_fraction(self) -> f64 {
        match self {
            TrainSplit::Full => 0.0,
            TrainSplit::Fraction(f) => 1.0 - f,
        }
    }
}

impl FromStr for TrainSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "full" {
            return Ok(TrainSplit::Full);
        }
        match s.parse::<f64>() {
            Ok(f) if f > 0.0 && f <= 1.0 => Ok(if f == 1.0 { TrainSplit::Full } else { TrainSplit::Fraction(f) }),
            _ => Err(format!("train split `{s}` must be `full` or a fraction in (0, 1]")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// `main_only` or `with_background`.
    pub map_mode: String,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            map_mode: "main_only".into(),
        }
    }
}

/// Everything a run needs, loaded from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sample_rate: u32,
    /// `full` or the training fraction, e.g. `0.9`.
    pub train_split: String,
    pub paths: PathsConfig,
    pub segmentation: SegmentationConfig,
    pub augment: AugmentConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            train_split: "0.9".into(),
            paths: PathsConfig::default(),
            segmentation: SegmentationConfig::default(),
            augment: AugmentConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section, including the cross-field constraint between
    /// the FFT window and the segment length.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: birdsong::Error| Usage(e.to_string());
        if self.sample_rate == 0 {
            return Err(Usage("sample_rate must be positive".into()).into());
        }
        self.segmentation.validate().map_err(wrap)?;
        self.augment.validate().map_err(wrap)?;
        self.training.validate().map_err(wrap)?;
        NetworkConfig {
            num_classes: 1,
            ..self.network.clone()
        }
        .validate()
        .map_err(wrap)?;
        self.split()?;
        self.map_mode()?;
        Ok(())
    }

    pub fn split(&self) -> Result<TrainSplit> {
        Ok(self.train_split.parse().map_err(Usage)?)
    }

    pub fn map_mode(&self) -> Result<MapMode> {
        Ok(self.inference.map_mode.parse::<MapMode>().map_err(|e| Usage(e.to_string()))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let text = "seed = 7\n[training]\nfft_window = 512\nsegment_samples = 65536\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.training.fft_window, 512);
        assert_eq!(cfg.training.batch_size, 16);
        cfg.validate().unwrap();
    }

    #[test]
    fn mismatched_feature_pair_fails() {
        let text = "[training]\nfft_window = 256\nsegment_samples = 65536\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().unwrap_err().downcast_ref::<Usage>().is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[training]\nlearning_rat = 0.1\n").is_err());
    }

    #[test]
    fn split_parsing() {
        assert_eq!("full".parse::<TrainSplit>().unwrap(), TrainSplit::Full);
        assert_eq!("0.9".parse::<TrainSplit>().unwrap(), TrainSplit::Fraction(0.9));
        assert_eq!("1".parse::<TrainSplit>().unwrap(), TrainSplit::Full);
        assert!("0".parse::<TrainSplit>().is_err());
        assert!("most".parse::<TrainSplit>().is_err());
    }
}
