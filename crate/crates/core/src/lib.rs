//! Transductive label propagation for span-based entity and relation
//! extraction.
//!
//! A small annotated corpus seeds a kNN affinity graph over span candidates
//! (entities) and span-pair candidates (relations). Labels diffuse over the
//! symmetrically normalized graph, and confident predictions on unlabeled
//! sentences become pseudo-labels in an augmented training corpus.
//!
//! The stages are exposed individually:
//!
//! - [`corpus`]: JSONL corpora, validation, labeled/unlabeled split
//! - [`spans`]: candidate enumeration and seed/unlabeled partitioning
//! - [`embed`]: token embedding files and span/pair features
//! - [`graph`]: kNN Gaussian affinity and normalization
//! - [`propagate`]: iterative and closed-form propagation, decoding
//! - [`pipeline`]: joint rounds, augmentation, evaluation
//! - [`report`]: run reports and convergence diagnostics
//! - [`diagnostics::oracle`]: dense brute-force references

pub mod corpus;
pub mod diagnostics;
pub mod embed;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod propagate;
pub mod report;
pub mod spans;

pub use error::{Error, Result};
