//! Faithfulness-guided beam search for conditional caption generation.
//!
//! The crate is organised around two narrow contracts: a conditional
//! language model ([`lm::LanguageModel`]) producing next-token
//! log-probabilities, and an [`embedding::EmbeddingProvider`] projecting
//! audio clips and texts into a shared space. Everything else (the search
//! algorithms, the caption metrics, the augmentation pipeline) is written
//! against those contracts so it can be verified exactly with the tabular
//! model and the bag-of-words oracle shipped here.

pub mod augment;
pub mod cli;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod selftest;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    normalize_text, validate_config, DecodeConfig, EmbeddingVector, Hypothesis, TokenId,
    ValidatedConfig, VocabInfo,
};
