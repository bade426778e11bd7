//! Core library for weak-ensemble-to-strong training experiments.
//!
//! The crate is organized around the life cycle of a weak-supervision run:
//!
//! - [`label_types`] — shared value types (distributions, Dirichlet
//!   concentrations, weak labels, soft sequence labels, schedules).
//! - [`losses`] — training objectives with analytic gradients: cross-entropy,
//!   the confidence-weighted auxiliary loss, multi-teacher ensembles,
//!   evidential (Dirichlet) losses with KL annealing, and DPO/cDPO.
//! - [`tokenizer`] / [`bridge`] — two toy subword tokenizers and the
//!   three-stage transfer that converts per-token probabilities from the weak
//!   tokenization into soft labels over the strong tokenization.
//! - [`models`] — small dense classifier and autoregressive generator models
//!   with exact backpropagation and a deterministic SGD training loop.
//! - [`decoding`] — beam search, teacher-forced scoring, ensemble re-ranking
//!   and preference-pair construction.
//! - [`metrics`] — accuracy, performance-gap-recovered, slot-filling F1 with
//!   partial credit, edit distance, and model-agreement matrices.

pub mod bridge;
pub mod decoding;
pub mod error;
pub mod label_types;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod tokenizer;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
