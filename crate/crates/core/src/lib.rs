//! Tokenization, aligned-corpus tooling, attention seq2seq models, and a
//! multi-metric evaluation harness for translating between LaTeX-rendered
//! mathematics and the Mizar formal language.
//!
//! The pipeline modules mirror its stages:
//!
//! - [`lexing`] — longest-match Mizar tokenization against per-article
//!   symbol tables, LaTeX tokenization, markup stripping.
//! - [`corpus`] — position-based alignment, seeded splitting, vocabulary
//!   construction, overlap statistics.
//! - [`model`] — the recurrent encoder/decoder family (LSTM / GRU /
//!   layer-norm LSTM cells, four attention variants, residual and
//!   bidirectional options), teacher-forced loss, greedy decoding, and
//!   self-describing checkpoints.
//! - [`training`] — SGD/Adam with gradient clipping, bucketed batching,
//!   snapshots, divergence handling.
//! - [`evaluation`] — perplexity, corpus BLEU, identical-statement rates,
//!   edit-distance buckets, greedy covers.
//!
//! [`tensor`] and [`graph`] hold the dense f64 matrices and the
//! reverse-mode tape everything numeric is built on, and [`rng`] the fixed
//! SplitMix64 generator behind every seeded decision. All floating-point
//! work is IEEE 754 double precision; a given seed reproduces results bit
//! for bit on a platform.

pub mod corpus;
pub mod evaluation;
pub mod graph;
pub mod lexing;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;
