//! Desk-scale emotion recognition in conversation with history- and
//! experience-oriented soft prompts and a label-paraphrasing auxiliary loss.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense `f64` tensors, a reverse-mode tape and gradient checks.
//! * [`corpus`]: conversations, tokenizer, vocabulary, gloss table, metrics and
//!   a synthetic generator with plantable label signals.
//! * [`model`]: a small encoder-decoder transformer with soft-embedding injection.
//! * [`retrieval`]: BM25 and cosine similar-utterance retrieval.
//! * [`prompts`]: the history- and experience-oriented prompt builders.
//! * [`training`]: the two-stage training procedure, ablations and evaluation.

pub mod corpus;
pub mod error;
pub mod kv;
pub mod model;
pub mod numerics;
pub mod prompts;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
