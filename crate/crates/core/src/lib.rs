//! Multi-modal bird-song identification.
//!
//! The pipeline splits field recordings into sound, noise and irrelevant
//! regions by median clipping, samples fixed-length training segments from
//! the sound region, augments them with same-class, neighbouring-species and
//! noise overlays, and feeds log-Mel spectrograms together with a seven
//! element metadata vector into a small convolutional network. Recordings are
//! scored by averaging predictions over half-overlapping segments and
//! evaluated with mean average precision.
//!
//! Modules map onto pipeline stages:
//!
//! - [`corpus`]: manifests, WAV decoding, the 1° neighbour index, splits
//! - [`dsp`]: STFT, unit normalisation, Mel filterbank
//! - [`segmentation`]: median clipping, morphology, sound/noise masks
//! - [`augment`]: stochastic waveform and spectrogram augmentation
//! - [`metadata`]: imputation, solar day parts, the metadata vector
//! - [`net`]: the convolutional network, gradients and the optimiser
//! - [`train`]: batch composition, the training loop, checkpoints
//! - [`infer`]: overlap-averaged prediction, ensembles and MAP

pub mod augment;
pub mod corpus;
pub mod dsp;
mod error;
pub mod infer;
pub mod metadata;
pub mod net;
pub mod rng;
pub mod segmentation;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use rng::RandomSource;
