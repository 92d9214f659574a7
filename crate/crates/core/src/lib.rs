//! Forward-backward retrieval-augmented generation over long contexts.
//!
//! Chunks are scored by BM25 against the question (backward) and against
//! rationale/answer samples drawn from a light model (forward); the best
//! chunks under a word budget go to a stronger model for the final answer.
//! Long Context, Vanilla RAG, order-preserving RAG and Self-Route are
//! implemented alongside for comparison.

pub mod chunker;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod planted;
pub mod prompt;
pub mod retriever;

pub use chunker::{chunk_document, count_words, Chunk};
pub use dataset::{registry, Example, TaskSpec};
pub use error::{Error, Result, Stage};
pub use llm::{ForwardSample, GenParams, LlmBackend};
pub use metrics::MetricKind;
pub use pipeline::{FbConfig, Mode, PipelineResult, Query};
pub use retriever::{ChunkIndex, ScoredChunk};
