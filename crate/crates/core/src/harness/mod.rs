//! File formats, dataset manifests, synthetic data and reference oracles.

pub mod config;
pub mod manifest;
pub mod oracle;
pub mod records;
pub mod synth;

pub use config::{Config, CONFIG_ENV};
pub use manifest::{count_split_records, validate_manifest, DatasetManifest, ManifestReport};
pub use records::{read_records, read_tubes, write_records, write_tubes, ClipScores, GroundingRecord, RecordError};
pub use synth::{synth_dataset, SynthDataset, SynthParams};
