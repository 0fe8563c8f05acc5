//! Document-scoped query auto-completion.
//!
//! The pieces: a BPE [`tokenizer`], completion and guidance [`trie`]s, an
//! n-gram [`scorer`], the soft trie-guided beam search in [`decoder`],
//! document [`context`] assembly, evaluation [`metrics`], the [`dataset`]
//! split pipeline, and an [`engine`] tying them together per corpus.

pub mod context;
pub mod dataset;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod scorer;
pub mod suggestion;
pub mod synth;
pub mod text;
pub mod tokenizer;
pub mod trie;

pub use error::{QacError, Result};
pub use suggestion::{Source, Suggestion};
