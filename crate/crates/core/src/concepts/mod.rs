//! Concept codebooks and procedural concept datasets.

pub mod dataset;
pub mod hadamard;
pub mod registry;
pub mod synth;

pub use dataset::{
    build_dual_dataset, build_encrypted_dataset, build_encrypted_dataset_with_styles, entry_path, read_dataset, watermarks,
    write_dataset, Dataset, DatasetConfig, DualLayout, Entry, Partition, HOLDOUT_FRACTION,
};
pub use registry::{
    assign_secrets, assign_secrets_with, close_pairs, distance_target, Codebook, ConceptId, ConceptRegistry,
    DistanceAudit, MAX_CONCEPTS,
};
pub use synth::{hue_mode, synth_concept_image, ConceptStyle, Motif};
