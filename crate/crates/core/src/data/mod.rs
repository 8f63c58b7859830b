//! Database synthesis, manifest ingestion, deterministic splits, and all
//! geometric/spectral preprocessing.

mod manifest;
mod mel;
mod preprocess;
mod split;
mod synth;
mod tensor_io;
mod types;

pub use manifest::{load_manifest, write_database};
pub use mel::{compute_mel_spectrogram, MelConfig, MelSpectrogram};
pub use preprocess::{
    bilinear_resize, preprocess_image, preprocess_motion_clip, GeomConfig,
};
pub use split::{split_database, SplitAssignment};
pub use synth::{generate_synthetic_database, Distortion, SynthConfig};
pub use tensor_io::{load_payload, save_payload};
pub use types::{Database, DatabaseSpec, MediaSample, Modality, MosRange, Payload, Registry};
