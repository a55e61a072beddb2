//! Conditional image-text embeddings for phrase grounding.
//!
//! A region-phrase scoring network with `K` text-conditioned embedding
//! subspaces, plus the pair mining, training schedule, and localization
//! evaluation needed to train and measure it. Region and phrase features are
//! consumed as precomputed inputs; [`data::gen_synthetic`] produces a
//! desk-scale grounding dataset with concept-conditional structure.

pub mod assignment;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod network;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{CiteError, Result};
