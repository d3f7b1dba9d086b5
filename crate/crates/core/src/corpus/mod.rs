//! Corpus ingestion: chunked text corpora, the term graph and the
//! image-report repository.

mod chunk;
mod graph;
mod report;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use chunk::{chunk_document, Chunk, ChunkParams};
pub use graph::{GraphRelation, GraphStore, GraphTerm, IngestStats, Neighbor};
pub use report::{
    dedup_reports, dhash_rgb, hamming, perceptual_hash, perceptual_hash_file, DedupOutcome,
    ReportEntry, ReportRecord,
};
pub use store::{
    load_chunk_store, load_graph_store, load_report_store, read_document_records, write_chunk_store,
    write_graph_store, write_report_store, ChunkStore, DocumentRecord, GRAPH_RELATIONS_FILE, GRAPH_TERMS_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid chunk parameters: max_len={max_len}, overlap={overlap}")]
    InvalidChunkParams { max_len: usize, overlap: usize },
    #[error("image decode failed for {source_name}: {message}")]
    Decode { source_name: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

/// The five textual corpora. Graph is the only structured one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusId {
    Research,
    Wiki,
    Book,
    Guideline,
    Graph,
}

impl CorpusId {
    pub const ALL: [CorpusId; 5] = [
        CorpusId::Research,
        CorpusId::Wiki,
        CorpusId::Book,
        CorpusId::Guideline,
        CorpusId::Graph,
    ];

    pub const UNSTRUCTURED: [CorpusId; 4] = [
        CorpusId::Research,
        CorpusId::Wiki,
        CorpusId::Book,
        CorpusId::Guideline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusId::Research => "research",
            CorpusId::Wiki => "wiki",
            CorpusId::Book => "book",
            CorpusId::Guideline => "guideline",
            CorpusId::Graph => "graph",
        }
    }

    pub fn is_structured(self) -> bool {
        self == CorpusId::Graph
    }
}

impl fmt::Display for CorpusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorpusId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown corpus '{s}'"))
    }
}

/// Imaging modality of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Radiology,
    Ophthalmology,
    Pathology,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Radiology, Modality::Ophthalmology, Modality::Pathology];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Radiology => "radiology",
            Modality::Ophthalmology => "ophthalmology",
            Modality::Pathology => "pathology",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality '{s}'"))
    }
}
