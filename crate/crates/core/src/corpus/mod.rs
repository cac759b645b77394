//! Recording corpus: manifests, audio decoding, spatial neighbours and splits.

mod audio;
mod manifest;
mod neighbors;
mod split;

pub use audio::{decode_audio, write_wav, Waveform, DEFAULT_SAMPLE_RATE};
pub use manifest::{load_manifest, parse_manifest, CorpusManifest, ManifestEntry, RecordingMetadata};
pub use neighbors::{build_neighbor_index, NeighborIndex, NEIGHBOR_DEGREES};
pub use split::split_train_val;
