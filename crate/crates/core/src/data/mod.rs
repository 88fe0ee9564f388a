//! Dataset manifests, image and mask ingestion, the synthetic shape
//! benchmark, and unpaired sampling.

pub mod batcher;
pub mod coco;
pub mod manifest;
pub mod sample;
pub mod synth;

pub use batcher::UnpairedBatcher;
pub use manifest::{load_manifest, CategoryEntry, DatasetManifest, MaskRef, SampleEntry, Split};
pub use sample::{load_image, load_mask, load_native, load_sample, save_image, save_mask, LoadedDataset};
pub use synth::{synth_dataset, Background, ShapeFamily, SyntheticSpec};
