//! Weakly-supervised phrase grounding: an untrained concept-similarity prior over
//! detector labels, refined by a small visual/textual network trained only from
//! image-sentence pairs.

pub mod checkpoint;
pub mod cli;
pub mod concept;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod phrase;
pub mod prediction;
pub mod prepared;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
