use std::collections::BTreeMap;
use std::sync::Arc;

use polysource_core::corpus::{
    chunk_document, ChunkParams, ChunkStore, CorpusId, GraphRelation, GraphStore, GraphTerm, Modality, ReportEntry,
};
use polysource_core::gateway::{EndpointKind, Gateway, ImageRef, ModelEndpoint, ResponseCache};
use polysource_core::query::{
    retrieve_graph, retrieve_reports, CorpusQuery, ExecDiagnostic, KnowledgeBase, QueryEngine, QuerySet, ReportIndex,
    RetrievalParams, TextCorpus,
};
use polysource_core::retrieval::{AdaptiveParams, DenseIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 16] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
    "mike", "november", "oscar", "papa",
];

fn gateway(kind: EndpointKind, model: &str, url: &str) -> Gateway {
    Gateway::connect(ModelEndpoint::new(kind, model, url), Arc::new(ResponseCache::in_memory())).unwrap()
}

fn filler(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect::<Vec<_>>().join(" ")
}

fn research_kb(embedder: &Gateway) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut chunks = Vec::new();
    for d in 0..40 {
        let text = if d == 17 {
            format!("{} renal angiomyolipoma fat containing lesion {}", filler(&mut rng, 30), filler(&mut rng, 30))
        } else {
            filler(&mut rng, 60)
        };
        chunks.extend(chunk_document(CorpusId::Research, &format!("doc{d:02}"), &text, ChunkParams::default()).unwrap());
    }
    assert_eq!(chunks.len(), 40);
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_texts(&texts).unwrap();
    let index = DenseIndex::build(
        embedder.model_id(),
        512,
        chunks.iter().zip(vectors).map(|(c, v)| (c.chunk_id.clone(), v.into_inner())),
    )
    .unwrap();
    let mut corpora = BTreeMap::new();
    corpora.insert(CorpusId::Research, TextCorpus { store: ChunkStore::new(chunks), index });
    KnowledgeBase { corpora, graph: None, reports: None }
}

const PLANTED: &str = "research:doc17:0";

#[test]
fn planted_chunk_comes_first() {
    let embedder = gateway(EndpointKind::TextEmbed, "hash", "mock://hash?dims=512");
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    let kb = research_kb(&embedder);
    let engine = QueryEngine::new(&kb, &embedder, &reranker, RetrievalParams::default()).unwrap();

    let mut qs = QuerySet::new();
    qs.push(CorpusId::Research, CorpusQuery::Text("renal angiomyolipoma fat containing lesion".into()));
    let out = engine.execute_queries(&qs);
    assert!(out.diagnostics.is_empty());
    // the query's five tokens all occur in the planted chunk and in no filler
    assert_eq!(out.bundle.documents[0].chunk_id, PLANTED);
    assert_eq!(out.bundle.documents[0].score, 5.0);
    assert_eq!(out.bundle.documents.len(), 2);
    assert_eq!(out.bundle.documents[1].score, 0.0);
}

#[test]
fn chunk_found_by_two_queries_appears_once() {
    let embedder = gateway(EndpointKind::TextEmbed, "hash", "mock://hash?dims=512");
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    let kb = research_kb(&embedder);
    let engine = QueryEngine::new(&kb, &embedder, &reranker, RetrievalParams::default()).unwrap();

    let mut qs = QuerySet::new();
    qs.push(CorpusId::Research, CorpusQuery::Text("fat containing".into()));
    qs.push(CorpusId::Research, CorpusQuery::Text("renal angiomyolipoma lesion".into()));
    let out = engine.execute_queries(&qs);
    let planted: Vec<_> = out.bundle.documents.iter().filter(|d| d.chunk_id == PLANTED).collect();
    assert_eq!(planted.len(), 1);
    assert_eq!(planted[0].score, 3.0);
    let mut ids: Vec<&str> = out.bundle.documents.iter().map(|d| d.chunk_id.as_str()).collect();
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert!(n <= 4);
}

#[test]
fn empty_query_set_gives_empty_bundle() {
    let embedder = gateway(EndpointKind::TextEmbed, "hash", "mock://hash?dims=512");
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    let kb = research_kb(&embedder);
    let engine = QueryEngine::new(&kb, &embedder, &reranker, RetrievalParams::default()).unwrap();
    let before = (embedder.stats().requests, reranker.stats().requests);
    let out = engine.execute_queries(&QuerySet::new());
    assert!(out.bundle.is_empty());
    assert!(out.diagnostics.is_empty());
    assert_eq!((embedder.stats().requests, reranker.stats().requests), before);
}

#[test]
fn caps_apply_and_missing_corpora_are_reported() {
    let embedder = gateway(EndpointKind::TextEmbed, "hash", "mock://hash?dims=512");
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    let kb = research_kb(&embedder);
    let engine = QueryEngine::new(&kb, &embedder, &reranker, RetrievalParams::default()).unwrap();
    let mut qs = QuerySet::new();
    for q in ["alpha", "bravo", "charlie"] {
        qs.push(CorpusId::Research, CorpusQuery::Text(q.into()));
    }
    qs.push(CorpusId::Wiki, CorpusQuery::Text("delta".into()));
    qs.push(CorpusId::Book, CorpusQuery::Text("echo".into()));
    qs.push(CorpusId::Graph, CorpusQuery::Graph { term: "lipoma".into(), relation: "x".into() });
    let out = engine.execute_queries(&qs);
    assert!(out.diagnostics.contains(&ExecDiagnostic::Overflow { corpus: CorpusId::Book, j: 1 }));
    assert!(out.diagnostics.contains(&ExecDiagnostic::NoIndex { corpus: CorpusId::Wiki, j: 1 }));
    assert!(out.diagnostics.contains(&ExecDiagnostic::NoIndex { corpus: CorpusId::Graph, j: 1 }));
    assert!(out.bundle.documents.len() <= 6);
}

fn term(id: &str, surface: &str) -> GraphTerm {
    GraphTerm { term_id: id.into(), surface: surface.into(), definition: String::new() }
}

/// (relation type, tail surface, shared tokens with "associated morphology")
const RELATIONS: [(&str, &str, f64); 15] = [
    ("associated morphology", "fatty tissue", 2.0),
    ("finding site", "soft tissue", 0.0),
    ("associated with", "obesity", 1.0),
    ("has morphology", "adipose neoplasm", 1.0),
    ("is a", "benign neoplasm", 0.0),
    ("associated morphology", "lipomatous tumor", 2.0),
    ("occurs in", "adults", 0.0),
    ("morphology of", "mature fat", 1.0),
    ("finding site", "subcutaneous tissue", 0.0),
    ("associated finding", "mass", 1.0),
    ("interprets", "morphology", 1.0),
    ("clinical course", "chronic", 0.0),
    ("associated morphology", "encapsulated mass", 2.0),
    ("has definitional manifestation", "painless lump", 0.0),
    ("associated procedure", "excision", 1.0),
];

fn lipoma_graph() -> GraphStore {
    let mut terms = vec![GraphTerm {
        term_id: "T0".into(),
        surface: "Lipoma".into(),
        definition: "benign fatty tumor".into(),
    }];
    let mut rels = Vec::new();
    for (i, (rel, tail, _)) in RELATIONS.iter().enumerate() {
        terms.push(term(&format!("T{}", i + 1), tail));
        rels.push(GraphRelation { head: "T0".into(), relation_type: rel.to_string(), tail: format!("T{}", i + 1) });
    }
    let mut g = GraphStore::new();
    let stats = g.ingest(terms, rels);
    assert_eq!(stats.rejected, 0);
    g
}

#[test]
fn graph_relations_ranked_by_hand_count() {
    let g = lipoma_graph();
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    let facts = retrieve_graph("  LIPOMA ", "associated morphology", &g, &reranker, 10).unwrap().unwrap();
    assert_eq!(facts.term_id, "T0");
    assert_eq!(facts.definition, "benign fatty tumor");
    // 2s in stored order, then the 1s, then the first 0
    let order = [0usize, 5, 12, 2, 3, 7, 9, 10, 14, 1];
    let want: Vec<(String, f64)> = order
        .iter()
        .map(|&i| (format!("Lipoma {} {}", RELATIONS[i].0, RELATIONS[i].1), RELATIONS[i].2))
        .collect();
    let got: Vec<(String, f64)> = facts.relations.iter().map(|f| (f.text.clone(), f.score)).collect();
    assert_eq!(got, want);
}

#[test]
fn graph_with_constant_scores_keeps_stored_order() {
    let mut g = GraphStore::new();
    g.ingest(
        vec![term("a", "aa"), term("b", "bb"), term("c", "cc"), term("d", "dd")],
        vec![
            GraphRelation { head: "a".into(), relation_type: "r1".into(), tail: "b".into() },
            GraphRelation { head: "c".into(), relation_type: "r2".into(), tail: "a".into() },
            GraphRelation { head: "a".into(), relation_type: "r3".into(), tail: "d".into() },
        ],
    );
    let reranker = gateway(EndpointKind::Rerank, "const", "mock://constant?score=0.5");
    let facts = retrieve_graph("aa", "anything", &g, &reranker, 10).unwrap().unwrap();
    let texts: Vec<&str> = facts.relations.iter().map(|f| f.text.as_str()).collect();
    assert_eq!(texts, ["aa r1 bb", "cc r2 aa", "aa r3 dd"]);
}

#[test]
fn unknown_term_is_a_diagnostic() {
    let g = lipoma_graph();
    let reranker = gateway(EndpointKind::Rerank, "overlap", "mock://overlap");
    assert!(retrieve_graph("xyzzy", "is a", &g, &reranker, 10).unwrap().is_none());

    let embedder = gateway(EndpointKind::TextEmbed, "hash", "mock://hash?dims=8");
    let kb = KnowledgeBase { corpora: BTreeMap::new(), graph: Some(g), reports: None };
    let engine = QueryEngine::new(&kb, &embedder, &reranker, RetrievalParams::default()).unwrap();
    let mut qs = QuerySet::new();
    qs.push(CorpusId::Graph, CorpusQuery::Graph { term: "xyzzy".into(), relation: "is a".into() });
    let out = engine.execute_queries(&qs);
    assert!(out.bundle.is_empty());
    assert_eq!(
        out.diagnostics,
        vec![ExecDiagnostic::TermNotFound { corpus: CorpusId::Graph, j: 1, term: "xyzzy".into() }]
    );
}

fn png(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let img = image::RgbImage::from_fn(8, 8, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).unwrap();
    out
}

struct ReportFixture {
    images: Vec<Vec<u8>>,
    entries: Vec<ReportEntry>,
    index: ReportIndex,
    embedder: Gateway,
}

fn report_fixture() -> ReportFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let embedder = gateway(EndpointKind::ImageEmbed, "img", "mock://hash?dims=16");
    let images: Vec<Vec<u8>> = (0..50).map(|_| png(&mut rng)).collect();
    let entries: Vec<ReportEntry> = images
        .iter()
        .enumerate()
        .map(|(i, b)| ReportEntry {
            report_id: format!("rep{i:02}"),
            modality: if i % 5 == 4 { Modality::Ophthalmology } else { Modality::Radiology },
            image_ref: format!("rep{i:02}.png"),
            report_text: format!("report number {i}"),
            phash: 0,
            embedding: Some(embedder.embed_image(&ImageRef::Inline(Arc::from(b.clone()))).unwrap().into_inner()),
        })
        .collect();
    let index = ReportIndex::build("img", &entries).unwrap();
    ReportFixture { images, entries, index, embedder }
}

/// Full scan over the stored vectors followed by the prefix rule.
fn composed_oracle(entries: &[ReportEntry], q: &[f64], modality: Modality, tau: f64, k_max: usize) -> Vec<String> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let nq = dot(q, q).sqrt();
    let mut scored: Vec<(f64, &str)> = entries
        .iter()
        .filter(|e| e.modality == modality)
        .map(|e| {
            let v = e.embedding.as_ref().unwrap();
            (dot(v, q) / (dot(v, v).sqrt() * nq), e.report_id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.truncate(k_max);
    let Some(&(top, _)) = scored.first() else {
        return Vec::new();
    };
    if top <= 0.0 {
        return vec![scored[0].1.to_string()];
    }
    scored.iter().take_while(|(s, _)| s / top >= tau).map(|(_, id)| id.to_string()).collect()
}

#[test]
fn report_selection_matches_composed_oracle() {
    let f = report_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..40 {
        let query = png(&mut rng);
        let q = f.embedder.embed_image(&ImageRef::Inline(Arc::from(query.clone()))).unwrap();
        let tau = [0.3, 0.5, 0.8, 0.95][round % 4];
        let modality = if round % 3 == 0 { Modality::Ophthalmology } else { Modality::Radiology };
        let got = retrieve_reports(
            &ImageRef::Inline(Arc::from(query)),
            modality,
            &f.index,
            &f.embedder,
            AdaptiveParams { tau, k_max: 3 },
        )
        .unwrap();
        let got: Vec<String> = got.into_iter().map(|r| r.report_id).collect();
        assert_eq!(got, composed_oracle(&f.entries, q.values(), modality, tau, 3), "round {round}");
    }
}

#[test]
fn self_retrieval_and_strict_tau() {
    let f = report_fixture();
    let img = ImageRef::Inline(Arc::from(f.images[7].clone()));
    let all = retrieve_reports(&img, Modality::Radiology, &f.index, &f.embedder, AdaptiveParams { tau: 0.0001, k_max: 3 })
        .unwrap();
    assert_eq!(all[0].report_id, "rep07");
    assert!((all[0].score - 1.0).abs() < 1e-12);
    assert_eq!(all[0].text, "report number 7");

    let one = retrieve_reports(&img, Modality::Radiology, &f.index, &f.embedder, AdaptiveParams { tau: 1.0, k_max: 3 })
        .unwrap();
    assert_eq!(one.len(), 1);
}
