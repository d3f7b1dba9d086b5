use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Chunk, CorpusError, CorpusId, GraphRelation, GraphStore, GraphTerm, ReportEntry};
use crate::jsonl;

/// Input record of an unstructured corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
}

pub fn read_document_records(path: &Path) -> Result<Vec<DocumentRecord>, CorpusError> {
    Ok(jsonl::read(path)?)
}

/// Sealed chunks of one corpus, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct ChunkStore {
    pub corpus: Option<CorpusId>,
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
}

impl ChunkStore {
    pub fn new(chunks: Vec<Chunk>) -> Self {
        let by_id = chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_id.clone(), i))
            .collect();
        Self {
            corpus: chunks.first().map(|c| c.corpus),
            chunks,
            by_id,
        }
    }

    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

pub fn write_chunk_store(path: &Path, chunks: &[Chunk]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, chunks)?)
}

pub fn load_chunk_store(path: &Path) -> Result<ChunkStore, CorpusError> {
    Ok(ChunkStore::new(jsonl::read(path)?))
}

pub const GRAPH_TERMS_FILE: &str = "graph_terms.jsonl";
pub const GRAPH_RELATIONS_FILE: &str = "graph_relations.jsonl";

/// Writes the accepted terms and relations; the index is rebuilt on load.
pub fn write_graph_store(dir: &Path, graph: &GraphStore) -> Result<(), CorpusError> {
    jsonl::write(&dir.join(GRAPH_TERMS_FILE), graph.terms())?;
    jsonl::write(&dir.join(GRAPH_RELATIONS_FILE), graph.relations())?;
    Ok(())
}

pub fn load_graph_store(dir: &Path) -> Result<GraphStore, CorpusError> {
    let terms: Vec<GraphTerm> = jsonl::read(&dir.join(GRAPH_TERMS_FILE))?;
    let relations: Vec<GraphRelation> = jsonl::read(&dir.join(GRAPH_RELATIONS_FILE))?;
    let mut graph = GraphStore::new();
    graph.ingest(terms, relations);
    Ok(graph)
}

pub fn write_report_store(path: &Path, entries: &[ReportEntry]) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, entries)?)
}

pub fn load_report_store(path: &Path) -> Result<Vec<ReportEntry>, CorpusError> {
    Ok(jsonl::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_document, ChunkParams};

    #[test]
    fn chunk_store_reload() {
        let dir = tempfile::tempdir().unwrap();
        let chunks = chunk_document(CorpusId::Guideline, "g1", &"z".repeat(1500), ChunkParams::default()).unwrap();
        let path = dir.path().join("guideline.jsonl");
        write_chunk_store(&path, &chunks).unwrap();
        let store = load_chunk_store(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.corpus, Some(CorpusId::Guideline));
        assert_eq!(store.get("guideline:g1:800").unwrap().text.len(), 700);
    }

    #[test]
    fn graph_store_reload_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = GraphStore::new();
        g.ingest(
            [
                GraphTerm { term_id: "a".into(), surface: "Alpha".into(), definition: "first".into() },
                GraphTerm { term_id: "b".into(), surface: "Beta".into(), definition: String::new() },
            ],
            [GraphRelation { head: "a".into(), relation_type: "precedes".into(), tail: "b".into() }],
        );
        write_graph_store(dir.path(), &g).unwrap();
        assert_eq!(load_graph_store(dir.path()).unwrap(), g);
    }

    #[test]
    fn document_records_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wiki.jsonl");
        std::fs::write(&path, "{\"doc_id\":\"w1\",\"text\":\"Lipoma is a benign tumor.\"}\n").unwrap();
        let recs = read_document_records(&path).unwrap();
        assert_eq!(recs[0].doc_id, "w1");
    }
}
