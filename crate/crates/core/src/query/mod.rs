//! Tagged query grammar and multi-corpus query execution.

mod engine;
mod grammar;

pub use engine::{
    bundle_records, retrieve_graph, retrieve_reports, BundleRecord, DocumentBundle, ExecDiagnostic,
    ExecOutcome, GraphFacts, KnowledgeBase, QueryEngine, ReportIndex, RetrievalParams, RetrievedChunk,
    RetrievedReport, ScoredFact, TextCorpus, BundleKind, knowledge_bundle,
};
pub use grammar::{
    parse_query_output, parse_query_output_with, CorpusQuery, ParseDiagnostic, ParseLimits, ParseMode,
    ParseOutcome, QueryEntry, QuerySet,
};
