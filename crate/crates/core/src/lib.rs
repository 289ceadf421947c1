//! Knowledge-base embedding alignment for a small transformer encoder.
//!
//! The pipeline: tokenize text and knowledge-base surface forms with one
//! vocabulary, index the knowledge embeddings, find knowledge-rich expressions
//! in training text by greedy longest match, and train the encoder with an
//! auxiliary loss that pulls projected expression embeddings toward their
//! knowledge embeddings.

pub mod align;
pub mod analysis;
mod binio;
pub mod cli;
pub mod error;
pub mod fingerprint;
pub mod gradcheck;
pub mod kb;
pub mod matcher;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use fingerprint::Fingerprint;
