//! Controlled table-to-text generation workbench.
//!
//! * [`data`]: pair records, tokenization, vocabulary, linearization, I/O.
//! * [`corpus`]: article XML ingestion, knowledge alignment, highlighting,
//!   inter-annotator agreement.
//! * [`nn`]: a small f64 reverse-mode autodiff kernel and transformer blocks.
//! * [`retriever`]: conditioned denoising-autoencoder retriever and TF-IDF.
//! * [`generator`]: encoder-decoder description generator, decoding, prompts
//!   and the external LLM adapter.
//! * [`eval`]: BLEU, METEOR, highlighted-cell recall, human-eval sheets.
//! * [`annotation`]: verdict log and per-annotator state behind the
//!   annotation service.
//! * [`diagnostics`]: finite-difference gradient checks of both models.

pub mod annotation;
pub mod corpus;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod nn;
pub mod generator;
pub mod retriever;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
