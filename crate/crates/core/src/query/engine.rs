use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grammar::{CorpusQuery, QueryEntry, QuerySet};
use crate::corpus::{ChunkStore, CorpusId, GraphStore, Modality, ReportEntry};
use crate::gateway::{Gateway, ImageRef};
use crate::prompts::{ContextDocument, KnowledgeBundle};
use crate::retrieval::{
    adaptive_select_reports, rerank_topk, AdaptiveParams, DenseIndex, RetrievalError, ScoredHit,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub top_n: usize,
    pub top_m: usize,
    pub graph_top_relations: usize,
    pub max_unstructured_queries: usize,
    pub max_graph_queries: usize,
    pub adaptive: AdaptiveParams,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            top_n: 10,
            top_m: 2,
            graph_top_relations: 10,
            max_unstructured_queries: 4,
            max_graph_queries: 1,
            adaptive: AdaptiveParams::default(),
        }
    }
}

/// A chunk store and its dense index.
#[derive(Debug, Clone)]
pub struct TextCorpus {
    pub store: ChunkStore,
    pub index: DenseIndex,
}

/// Report embeddings partitioned by modality, plus the report texts.
#[derive(Debug, Clone, Default)]
pub struct ReportIndex {
    indices: BTreeMap<Modality, DenseIndex>,
    texts: HashMap<String, String>,
}

impl ReportIndex {
    /// Every entry must carry an embedding.
    pub fn build(model_id: &str, entries: &[ReportEntry]) -> Result<Self, RetrievalError> {
        let mut grouped: BTreeMap<Modality, Vec<(String, Vec<f64>)>> = BTreeMap::new();
        let mut texts = HashMap::new();
        let mut dims = None;
        for e in entries {
            let v = e.embedding.clone().ok_or_else(|| {
                RetrievalError::InvalidParameter(format!("report '{}' has no embedding", e.report_id))
            })?;
            dims.get_or_insert(v.len());
            grouped.entry(e.modality).or_default().push((e.report_id.clone(), v));
            texts.insert(e.report_id.clone(), e.report_text.clone());
        }
        let dims = dims.unwrap_or(0);
        let indices = grouped
            .into_iter()
            .map(|(m, items)| Ok((m, DenseIndex::build(model_id, dims, items)?)))
            .collect::<Result<_, RetrievalError>>()?;
        Ok(Self { indices, texts })
    }

    pub fn from_parts(indices: BTreeMap<Modality, DenseIndex>, texts: HashMap<String, String>) -> Self {
        Self { indices, texts }
    }

    pub fn index(&self, modality: Modality) -> Option<&DenseIndex> {
        self.indices.get(&modality)
    }

    pub fn indices(&self) -> &BTreeMap<Modality, DenseIndex> {
        &self.indices
    }

    pub fn text(&self, report_id: &str) -> Option<&str> {
        self.texts.get(report_id).map(String::as_str)
    }
}

/// Sealed stores a query set runs against.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    pub corpora: BTreeMap<CorpusId, TextCorpus>,
    pub graph: Option<GraphStore>,
    pub reports: Option<ReportIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk_id: String,
    pub corpus: CorpusId,
    pub text: String,
    /// Reranker score.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFacts {
    pub term_id: String,
    pub term: String,
    pub definition: String,
    pub relations: Vec<ScoredFact>,
}

impl GraphFacts {
    /// `surface: definition` when there is a definition, then one line per
    /// relation.
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.definition.trim().is_empty() {
            out.push(format!("{}: {}", self.term, self.definition));
        }
        out.extend(self.relations.iter().map(|r| r.text.clone()));
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentBundle {
    pub documents: Vec<RetrievedChunk>,
    pub graph_facts: Vec<GraphFacts>,
}

impl DocumentBundle {
    pub fn is_empty(&self) -> bool {
        self.documents.is_empty() && self.graph_facts.is_empty()
    }

    pub fn context_documents(&self) -> Vec<ContextDocument> {
        let mut out: Vec<ContextDocument> = self
            .documents
            .iter()
            .map(|d| ContextDocument { provenance: d.corpus.to_string(), text: d.text.clone() })
            .collect();
        for facts in &self.graph_facts {
            out.extend(facts.lines().into_iter().map(|text| ContextDocument {
                provenance: CorpusId::Graph.to_string(),
                text,
            }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedReport {
    pub report_id: String,
    pub text: String,
    pub score: f64,
}

/// Why one query contributed nothing. Serialized with `kind` as tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecDiagnostic {
    TermNotFound { corpus: CorpusId, j: usize, term: String },
    NoIndex { corpus: CorpusId, j: usize },
    RetrievalFailed { corpus: CorpusId, j: usize, message: String },
    Overflow { corpus: CorpusId, j: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecOutcome {
    pub bundle: DocumentBundle,
    pub diagnostics: Vec<ExecDiagnostic>,
}

enum QueryResult {
    Chunks(Vec<RetrievedChunk>),
    Facts(GraphFacts),
    Failed(ExecDiagnostic),
}

pub struct QueryEngine<'a> {
    pub kb: &'a KnowledgeBase,
    pub text_embedder: &'a Gateway,
    pub reranker: &'a Gateway,
    pub params: RetrievalParams,
}

impl<'a> QueryEngine<'a> {
    /// Fails when an unstructured index was built with a different model
    /// than the text embedder.
    pub fn new(
        kb: &'a KnowledgeBase,
        text_embedder: &'a Gateway,
        reranker: &'a Gateway,
        params: RetrievalParams,
    ) -> Result<Self, RetrievalError> {
        for (corpus, tc) in &kb.corpora {
            if tc.index.model_id() != text_embedder.model_id() {
                return Err(RetrievalError::InvalidParameter(format!(
                    "{corpus} index built with '{}', embedder is '{}'",
                    tc.index.model_id(),
                    text_embedder.model_id()
                )));
            }
        }
        Ok(Self { kb, text_embedder, reranker, params })
    }

    /// Dense top-n followed by rerank to top-m.
    pub fn retrieve_text(&self, corpus: CorpusId, query: &str) -> Result<Option<Vec<RetrievedChunk>>, RetrievalError> {
        let Some(tc) = self.kb.corpora.get(&corpus) else {
            return Ok(None);
        };
        if tc.index.is_empty() || self.params.top_n == 0 {
            return Ok(Some(Vec::new()));
        }
        let q = self.text_embedder.embed_text(query)?;
        let hits = tc.index.knn_search(q.values(), self.params.top_n)?;
        let texts: Vec<String> = hits
            .iter()
            .map(|h| {
                tc.store
                    .get(&h.item_id)
                    .map(|c| c.text.clone())
                    .ok_or_else(|| RetrievalError::Format(format!("index id '{}' not in chunk store", h.item_id)))
            })
            .collect::<Result<_, _>>()?;
        let m = self.params.top_m.min(hits.len());
        let top = rerank_topk(query, &hits, &texts, m, self.reranker)?;
        Ok(Some(
            top.into_iter()
                .map(|h| {
                    let text = tc.store.get(&h.item_id).map(|c| c.text.clone()).unwrap_or_default();
                    RetrievedChunk { chunk_id: h.item_id, corpus, text, score: h.score }
                })
                .collect(),
        ))
    }

    fn run_one(&self, entry: &QueryEntry) -> QueryResult {
        let (corpus, j) = (entry.corpus, entry.j);
        let failed = |e: RetrievalError| {
            QueryResult::Failed(ExecDiagnostic::RetrievalFailed { corpus, j, message: e.to_string() })
        };
        match &entry.query {
            CorpusQuery::Text(text) => match self.retrieve_text(corpus, text) {
                Ok(Some(chunks)) => QueryResult::Chunks(chunks),
                Ok(None) => QueryResult::Failed(ExecDiagnostic::NoIndex { corpus, j }),
                Err(e) => failed(e),
            },
            CorpusQuery::Graph { term, relation } => {
                let Some(graph) = &self.kb.graph else {
                    return QueryResult::Failed(ExecDiagnostic::NoIndex { corpus, j });
                };
                match retrieve_graph(term, relation, graph, self.reranker, self.params.graph_top_relations) {
                    Ok(Some(facts)) => QueryResult::Facts(facts),
                    Ok(None) => QueryResult::Failed(ExecDiagnostic::TermNotFound { corpus, j, term: term.clone() }),
                    Err(e) => failed(e),
                }
            }
        }
    }

    /// Runs every admitted query (concurrently) and merges the results.
    /// A failing query becomes a diagnostic and never affects the others.
    /// Chunks retrieved by several queries are kept once, with their best
    /// score and the position of that best occurrence.
    pub fn execute_queries(&self, qs: &QuerySet) -> ExecOutcome {
        let mut diagnostics = Vec::new();
        let mut admitted = Vec::new();
        let (mut unstructured, mut graph) = (0usize, 0usize);
        for e in qs.entries() {
            let (count, cap) = if e.corpus.is_structured() {
                (&mut graph, self.params.max_graph_queries)
            } else {
                (&mut unstructured, self.params.max_unstructured_queries)
            };
            if *count >= cap {
                diagnostics.push(ExecDiagnostic::Overflow { corpus: e.corpus, j: e.j });
            } else {
                *count += 1;
                admitted.push(e);
            }
        }

        let results: Vec<QueryResult> = admitted.par_iter().map(|e| self.run_one(e)).collect();

        let mut bundle = DocumentBundle::default();
        let mut best: HashMap<String, (usize, usize)> = HashMap::new(); // chunk -> (slot, j)
        let mut slots: Vec<(usize, RetrievedChunk)> = Vec::new();
        for (entry, result) in admitted.iter().zip(results) {
            match result {
                QueryResult::Chunks(chunks) => {
                    for c in chunks {
                        match best.get(&c.chunk_id) {
                            Some(&(slot, _)) if slots[slot].1.score >= c.score => {}
                            Some(&(slot, _)) => {
                                slots[slot] = (entry.j, c.clone());
                                best.insert(c.chunk_id.clone(), (slot, entry.j));
                            }
                            None => {
                                best.insert(c.chunk_id.clone(), (slots.len(), entry.j));
                                slots.push((entry.j, c));
                            }
                        }
                    }
                }
                QueryResult::Facts(f) => bundle.graph_facts.push(f),
                QueryResult::Failed(d) => diagnostics.push(d),
            }
        }
        slots.sort_by(|(ja, a), (jb, b)| {
            a.corpus
                .cmp(&b.corpus)
                .then(ja.cmp(jb))
                .then(b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
                .then(a.chunk_id.cmp(&b.chunk_id))
        });
        bundle.documents = slots.into_iter().map(|(_, c)| c).collect();
        ExecOutcome { bundle, diagnostics }
    }
}

/// Definition plus one-hop relations reranked against `relation`, keeping
/// `top` of them; ties keep stored order. `None` when the term is unknown.
pub fn retrieve_graph(
    term: &str,
    relation: &str,
    graph: &GraphStore,
    reranker: &Gateway,
    top: usize,
) -> Result<Option<GraphFacts>, RetrievalError> {
    let Some(t) = graph.lookup(term) else {
        return Ok(None);
    };
    let neighbors = graph.neighbors(&t.term_id);
    let texts: Vec<String> = neighbors.iter().map(|n| n.render()).collect();
    let hits: Vec<ScoredHit> = (0..texts.len())
        .map(|i| ScoredHit { item_id: i.to_string(), score: 0.0, rank: i + 1 })
        .collect();
    let ranked = rerank_topk(relation, &hits, &texts, top.min(hits.len()), reranker)?;
    let relations = ranked
        .into_iter()
        .map(|h| {
            let i: usize = h.item_id.parse().expect("positional id");
            ScoredFact { text: texts[i].clone(), score: h.score }
        })
        .collect();
    Ok(Some(GraphFacts {
        term_id: t.term_id.clone(),
        term: t.surface.clone(),
        definition: t.definition.clone(),
        relations,
    }))
}

/// Embeds the image, searches same-modality reports and applies adaptive
/// selection. A modality with no reports yields nothing.
pub fn retrieve_reports(
    image: &ImageRef,
    modality: Modality,
    reports: &ReportIndex,
    image_embedder: &Gateway,
    adaptive: AdaptiveParams,
) -> Result<Vec<RetrievedReport>, RetrievalError> {
    let q = image_embedder.embed_image(image)?;
    let Some(index) = reports.index(modality) else {
        return Ok(Vec::new());
    };
    if index.is_empty() || adaptive.k_max == 0 {
        return Ok(Vec::new());
    }
    if index.model_id() != image_embedder.model_id() {
        return Err(RetrievalError::InvalidParameter(format!(
            "report index built with '{}', embedder is '{}'",
            index.model_id(),
            image_embedder.model_id()
        )));
    }
    let hits = index.knn_search(q.values(), adaptive.k_max)?;
    Ok(adaptive_select_reports(&hits, adaptive)?
        .into_iter()
        .map(|h| RetrievedReport {
            text: reports.text(&h.item_id).unwrap_or_default().to_string(),
            report_id: h.item_id,
            score: h.score,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Report,
    Document,
    GraphFact,
}

/// Flat line form of retrieved context. Reports use their modality as
/// `corpus`; a graph definition line has no score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub sample_id: String,
    pub kind: BundleKind,
    pub corpus: String,
    pub text: String,
    pub score: Option<f64>,
}

pub fn bundle_records(
    sample_id: &str,
    modality: Option<Modality>,
    reports: &[RetrievedReport],
    bundle: &DocumentBundle,
) -> Vec<BundleRecord> {
    let mut out = Vec::new();
    let report_corpus = modality.map(|m| m.to_string()).unwrap_or_default();
    for r in reports {
        out.push(BundleRecord {
            sample_id: sample_id.into(),
            kind: BundleKind::Report,
            corpus: report_corpus.clone(),
            text: r.text.clone(),
            score: Some(r.score),
        });
    }
    for d in &bundle.documents {
        out.push(BundleRecord {
            sample_id: sample_id.into(),
            kind: BundleKind::Document,
            corpus: d.corpus.to_string(),
            text: d.text.clone(),
            score: Some(d.score),
        });
    }
    for f in &bundle.graph_facts {
        if !f.definition.trim().is_empty() {
            out.push(BundleRecord {
                sample_id: sample_id.into(),
                kind: BundleKind::GraphFact,
                corpus: CorpusId::Graph.to_string(),
                text: format!("{}: {}", f.term, f.definition),
                score: None,
            });
        }
        for r in &f.relations {
            out.push(BundleRecord {
                sample_id: sample_id.into(),
                kind: BundleKind::GraphFact,
                corpus: CorpusId::Graph.to_string(),
                text: r.text.clone(),
                score: Some(r.score),
            });
        }
    }
    out
}

/// Context for the answer prompt from retrieval results.
pub fn knowledge_bundle(reports: &[RetrievedReport], bundle: &DocumentBundle) -> KnowledgeBundle {
    KnowledgeBundle {
        reports: reports.iter().map(|r| r.text.clone()).collect(),
        documents: bundle.context_documents(),
    }
}
