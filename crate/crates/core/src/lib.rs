//! Variational autoencoder for small attributed graphs.
//!
//! The decoder emits a probabilistic fully-connected graph on a fixed number
//! of nodes `k`; training aligns it with the ground-truth graph through
//! approximate second-order graph matching and minimizes a matched
//! cross-entropy reconstruction loss plus the usual KL term.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, reverse-mode tape, Adam.
//! - [`graph`]: discrete and probabilistic graphs, point estimates.
//! - [`matching`]: affinity construction, max-pooling matching, Hungarian.
//! - [`model`]: encoder, decoder, losses and training.
//! - [`chem`]: atom/bond vocabularies, valence checks, canonical keys.
//! - [`data`]: SDF and JSON ingestion, splits, experiment configuration.
//! - [`eval`]: generation metrics, traversals, matching robustness.
//! - [`checkpoint`]: binary model container.

pub mod checkpoint;
pub mod chem;
pub mod data;
pub mod eval;
pub mod graph;
pub mod matching;
pub mod model;
pub mod tensor;
