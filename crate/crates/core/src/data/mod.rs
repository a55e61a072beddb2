//! Dataset files, run configuration, and the synthetic generator.

mod config;
mod dataset;
mod features;
mod synth;

pub use config::{load_config, parse_config, preset, RunConfig, PRESETS};
pub use dataset::{
    load_annotations, load_dataset, load_proposals, AnnotationRecord, EncodedInputs, GroundingDataset, Image, Phrase,
    ProposalRecord, Split, ANNOTATIONS_FILE, PHRASE_FEATURES_FILE, PROPOSALS_FILE, REGION_FEATURES_FILE,
};
pub use features::{ids_path, load_features, FeatureStore, FEATURE_MAGIC, FEATURE_VERSION};
pub use synth::{concept_category, gen_synthetic, synthetic_dictionary, SynthConfig};
