//! Multimodal contrastive sentence embeddings with object-phrase alignment.
//!
//! The crate trains a text encoder with three contrastive objectives:
//! dropout-view text contrast, caption-image contrast against frozen image
//! features, and a within-pair contrast between caption phrases and the image
//! objects they were grounded to. Around those objectives it provides the
//! corpus format and filtering rules, span pooling, an STS evaluation
//! harness, a deterministic synthetic corpus generator and a CLI.

pub mod archive;
pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod pooling;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};

/// Width of the frozen image encoder features.
pub const IMAGE_FEATURE_DIM: usize = 2048;

/// Width of the shared text/image embedding space.
pub const SHARED_DIM: usize = 256;
