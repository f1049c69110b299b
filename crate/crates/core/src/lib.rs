//! Retrieval-augmented visuo-tactile description pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: dense tensors, a reverse-mode autodiff tape, attention
//!   layers, AdamW and checkpoints.
//! * [`features`]: embedding vectors, the synthetic embedding generator and
//!   feature import.
//! * [`corpus`]: tactile recaptioning, caption validation, stratified
//!   subsets, binary shards and vocabulary statistics.
//! * [`index`]: exact top-K cosine retrieval with a brute-force oracle.
//! * [`retriever`]: the tactile-guided query network and its training
//!   objective.
//! * [`integrator`]: texture-aware fusion of retrieved items into the
//!   visual prompt and a multi-label adjective head.
//! * [`harness`]: experiment runners, reports and the CLI.

pub(crate) mod bytes;
pub mod corpus;
pub mod error;
pub mod features;
pub mod harness;
pub mod hash;
pub mod index;
pub mod integrator;
pub mod numcore;
pub mod retriever;

pub use error::{Error, Result};
