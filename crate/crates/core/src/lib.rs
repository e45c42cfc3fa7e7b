//! Topic-sensitive neural headline generation.
//!
//! The pipeline: a JSONL corpus is tokenized to characters; LDA (collapsed
//! Gibbs) assigns each text a hard topic label; a GRU attention
//! encoder-decoder is trained as a shared baseline and then forked into K
//! topic-specific replicas, each fine-tuned on its topic's data; generation
//! routes through the LDA label and output quality is scored with
//! ROUGE-1/2/L, overall and per topic.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gru;
pub mod lda;
pub mod nhg;
pub mod nn;
pub mod rouge;
pub mod synth;
pub mod topic_nhg;

pub use error::{Error, Result};
