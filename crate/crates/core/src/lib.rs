//! Sentence-aware document graphs with sparse structure learning for
//! inductive text classification.
//!
//! A document is represented as a disjoint union of sentence-level word
//! co-occurrence subgraphs. A GNN passes messages along the static
//! within-sentence edges while a structure-learning head scores candidate
//! inter-sentence edges and samples a sparse subset of them per layer with
//! a temperature-controlled Gumbel-softmax selector. The whole pipeline is
//! trained end to end on a built-in reverse-mode differentiation engine.
//!
//! The crate is organised as:
//!
//! - [`autodiff`]: dense 2-D tensors, the recording tape, Adam, and a
//!   finite-difference gradient checker.
//! - [`textpipe`]: corpus ingestion, tokenisation, vocabulary, embedding
//!   initialisation, and synthetic corpus generation.
//! - [`graph`]: sentence subgraph and document graph construction in four
//!   modes, degree normalisation, and mini-batch merging.
//! - [`model`]: the joint local/global message-passing layers, candidate
//!   scoring, Gumbel edge selection, readout, and loss.
//! - [`train`]: the training loop, evaluation metrics, checkpointing, and
//!   the `key = value` run configuration format.
//!
//! Batch-level work (graph construction, evaluation, sweep cells) runs on
//! rayon when the default `parallel` feature is enabled; disabling it gives
//! a fully sequential build with identical results.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod model;
pub mod parallel;
pub mod textpipe;
pub mod train;

pub use error::{Error, Result};
