//! Patent landscaping toolkit.
//!
//! The crate covers the whole path from a retrieved patent set to a trained
//! relevance classifier:
//!
//! - [`corpus`]: record model, ingestion, 6:2:2 splitting of valid patents and
//!   CPC-based undersampling of negatives.
//! - [`searchdsl`]: boolean keyword formulas with prefix wildcards, a local
//!   evaluator and a BigQuery-style SQL emitter.
//! - [`codegraph`]: per-family code co-occurrence graphs and Diff2Vec
//!   embeddings (diffusion trees, Euler tours, skip-gram).
//! - [`textenc`]: abstract tokenization with `[CLS]`/`[SEP]` markers and
//!   token-embedding pretraining.
//! - [`nn`]: a small reverse-mode tensor tape, the transformer encoder,
//!   code branches, the MLP head and Adam.
//! - [`pipeline`]: model assembly, training, average precision and F1.
//! - [`synth`]: seeded synthetic corpora with a planted relevance signal.

pub mod codegraph;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod searchdsl;
pub mod skipgram;
pub mod synth;
pub mod textenc;

pub use error::{Error, Result};
