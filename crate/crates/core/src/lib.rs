//! End-to-end pipeline for classifying malware from dynamic API-call sequences.
//!
//! Each API call is described by a short explanatory text (fetched from an LLM
//! endpoint or a pre-captured lookup file), the text is embedded by a pretrained
//! text encoder into a per-call matrix, and the matrices of a call sequence are
//! stacked into a fixed-shape tensor that a multi-kernel CNN classifies.
//!
//! Module map:
//! - [`corpus`]: labeled datasets, vocabularies, merging/splitting, IoU.
//! - [`text`]: prompt rendering, text sources, sanitation, persistent text store.
//! - [`repr`]: WordPiece tokenization, encoders, per-call matrix cache, tensors.
//! - [`model`]: the CNN classifier, training, evaluation metrics, FLOPs estimate.
//! - [`analysis`]: representation-quality measurements (cosine similarity,
//!   wide/narrow pairs, semantic chains, heatmaps).
//! - [`experiments`]: cross-database, few-shot and text-length protocols plus
//!   report bundles.

pub mod analysis;
pub mod corpus;
pub mod experiments;
pub mod model;
pub mod repr;
pub mod text;
