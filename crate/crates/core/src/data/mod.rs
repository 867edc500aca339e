//! Datasets: manifests, imbalance handling, hybrid relabeling, splits and
//! the synthetic frame generator.

pub mod images;
pub mod manifest;
pub mod prepare;
pub mod synth;
pub mod weights;

pub use images::{FrameImage, ImageStore};
pub use manifest::{
    load_manifest, save_manifest, DatasetManifest, FrameRecord, LabelRule, ModeledAuSet,
    Provenance, ProvenanceStep,
};
pub use prepare::{merge_hybrid, split_framewise, split_subject_disjoint, undersample};
pub use synth::{synth_generate, RenderSpec, SynthConfig, SynthDataset};
pub use weights::{class_weights_from_rates, compute_class_weights, ClassWeights};
