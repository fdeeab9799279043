//! Dependency-masked transformer encoder for Winograd-schema coreference
//! resolution framed as next-sentence prediction.
//!
//! The pipeline: a schema's pronoun is replaced by each candidate antecedent
//! ([`schema`]), each candidate sentence is encoded as `[CLS] A [SEP] B [SEP]`
//! ([`tokenizer`]), its dependency parse becomes a token-level attention mask
//! ([`depmask`]), and the encoder's NSP head scores it ([`encoder`]). The
//! higher-scoring candidate wins. [`trainer`] fine-tunes on labeled candidate
//! sentences and [`evaluator`] computes the subset and consistency metrics.

pub mod depmask;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod numcore;
pub mod schema;
pub mod seeds;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
