//! Exact dense search, reranking, rank fusion and adaptive report-context
//! selection.

mod adaptive;
mod fusion;
mod index;
mod rerank;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;

pub use adaptive::{adaptive_select_reports, AdaptiveParams};
pub use fusion::{rrf_fuse, DEFAULT_RRF_K0};
pub use index::DenseIndex;
pub use rerank::rerank_topk;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate item id '{0}'")]
    DuplicateId(String),
    #[error("zero or non-finite vector for '{0}'")]
    ZeroVector(String),
    #[error("malformed index file: {0}")]
    Format(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Ranks are 1-based; within a list scores never increase with rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub item_id: String,
    pub score: f64,
    pub rank: usize,
}
