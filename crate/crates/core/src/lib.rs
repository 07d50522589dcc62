//! Biomedical named entity recognition toolkit.
//!
//! The crate covers the full tagging pipeline: sentence splitting and
//! tokenization ([`corpus`]), static word vectors ([`embeddings`]), a
//! BiLSTM-CNN-CRF tagger trained from scratch ([`nercore`]), chunk decoding
//! with confidences ([`chunking`]), entity-level scoring ([`eval`]) and
//! policy-driven de-identification ([`deid`]).

pub mod chunking;
pub mod corpus;
pub mod deid;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod nercore;

pub use error::{Error, Result};
