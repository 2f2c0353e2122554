//! Sentiment classification for code-mixed text: character and word
//! representations fused by a learned per-dimension gate, read by an
//! attention BiLSTM.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod diffmath;
pub mod embeddings;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synthetic;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
