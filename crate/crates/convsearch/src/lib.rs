//! Mixed-initiative conversational search with a simulated user.
//!
//! The crate wires together a retrieval pipeline (query rewriting,
//! clarifying questions, BM25 retrieval, feedback-driven query
//! expansion, reranking) and a simulated user that answers clarifying
//! questions and judges responses, then evaluates the resulting ranked
//! lists with TREC-style metrics.
//!
//! Start from [`pipeline::run_turn`] for a single query, or
//! [`pipeline::run_dataset`] for a batch of conversations. The
//! `examples/` directory contains one runnable program per capability.

pub mod analysis;
pub mod clarify;
pub mod cli;
pub mod client;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod index;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rerank;
pub mod simulate;

pub use error::{Error, Result};
