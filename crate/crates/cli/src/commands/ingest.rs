use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use polysource_core::corpus::{
    chunk_document, dedup_reports, load_chunk_store, load_report_store, perceptual_hash_file, read_document_records,
    write_chunk_store, write_graph_store, write_report_store, CorpusId, GraphRelation, GraphStore, GraphTerm,
    IngestStats, Modality, ReportEntry, ReportRecord, GRAPH_RELATIONS_FILE, GRAPH_TERMS_FILE,
};
use polysource_core::gateway::ImageRef;
use polysource_core::jsonl;
use polysource_core::retrieval::DenseIndex;
use serde::Serialize;

use super::{chunk_store_path, create_dir, graph_dir, report_index_path, report_store_path, text_index_path, write_json};
use crate::config::Role;
use crate::manifest::Recorder;
use crate::{CliError, Loaded};

#[derive(Debug, Default, Serialize)]
struct ReportIngest {
    read: usize,
    kept: usize,
    rejected: Vec<String>,
    /// removed report id -> kept report id
    duplicates: BTreeMap<String, String>,
}

#[derive(Debug, Default, Serialize)]
struct IngestReport {
    documents: BTreeMap<CorpusId, usize>,
    chunks: BTreeMap<CorpusId, usize>,
    graph: Option<IngestStats>,
    reports: Option<ReportIngest>,
}

fn ingest_reports(corpus_dir: &Path, records: Vec<ReportRecord>, threshold: u32) -> (Vec<ReportEntry>, ReportIngest) {
    let mut report = ReportIngest { read: records.len(), ..Default::default() };
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for r in records {
        if !seen.insert(r.report_id.clone()) {
            report.rejected.push(format!("{}: duplicate report id", r.report_id));
            continue;
        }
        match perceptual_hash_file(&corpus_dir.join(&r.image_path)) {
            Ok(phash) => entries.push(ReportEntry {
                report_id: r.report_id,
                modality: r.modality,
                image_ref: r.image_path,
                report_text: r.report_text,
                phash,
                embedding: None,
            }),
            Err(e) => report.rejected.push(format!("{}: {e}", r.report_id)),
        }
    }
    let out = dedup_reports(entries, threshold);
    report.kept = out.kept.len();
    report.duplicates = out.duplicates;
    (out.kept, report)
}

pub fn ingest(loaded: &Loaded) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let corpus_dir = loaded.corpus_dir();
    if !corpus_dir.is_dir() {
        return Err(CliError::Config(format!("corpus_dir {} does not exist", corpus_dir.display())));
    }
    let store_dir = loaded.store_dir();
    let mut rec = Recorder::new(&loaded.base, "ingest", &loaded.hash);
    let mut report = IngestReport::default();
    let mut stores = 0;
    create_dir(&store_dir)?;

    for corpus in CorpusId::UNSTRUCTURED {
        let input = corpus_dir.join(format!("{corpus}.jsonl"));
        if !input.exists() {
            continue;
        }
        let docs = read_document_records(&input).map_err(|e| CliError::Pipeline(e.to_string()))?;
        let mut ids = HashSet::new();
        let mut chunks = Vec::new();
        for d in &docs {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(CliError::Pipeline(format!("{}: duplicate doc_id '{}'", input.display(), d.doc_id)));
            }
            chunks.extend(
                chunk_document(corpus, &d.doc_id, &d.text, cfg.chunk_params())
                    .map_err(|e| CliError::Pipeline(e.to_string()))?,
            );
        }
        let out = chunk_store_path(&store_dir, corpus);
        write_chunk_store(&out, &chunks).map_err(|e| CliError::Pipeline(e.to_string()))?;
        report.documents.insert(corpus, docs.len());
        report.chunks.insert(corpus, chunks.len());
        rec.input(input);
        rec.output(out);
        stores += 1;
    }

    let terms_in = corpus_dir.join(GRAPH_TERMS_FILE);
    if terms_in.exists() {
        let terms: Vec<GraphTerm> = jsonl::read(&terms_in).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.input(terms_in);
        let rels_in = corpus_dir.join(GRAPH_RELATIONS_FILE);
        let relations: Vec<GraphRelation> = if rels_in.exists() {
            let r = jsonl::read(&rels_in).map_err(|e| CliError::Pipeline(e.to_string()))?;
            rec.input(rels_in);
            r
        } else {
            Vec::new()
        };
        let mut graph = GraphStore::new();
        let stats = graph.ingest(terms, relations);
        let dir = graph_dir(&store_dir);
        create_dir(&dir)?;
        write_graph_store(&dir, &graph).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.output(dir.join(GRAPH_TERMS_FILE));
        rec.output(dir.join(GRAPH_RELATIONS_FILE));
        report.graph = Some(stats);
        stores += 1;
    }

    let reports_in = corpus_dir.join("reports.jsonl");
    if reports_in.exists() {
        let records: Vec<ReportRecord> = jsonl::read(&reports_in).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.input(reports_in);
        let (kept, summary) = ingest_reports(&corpus_dir, records, cfg.dedup_threshold);
        let out = report_store_path(&store_dir);
        write_report_store(&out, &kept).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.output(out);
        report.reports = Some(summary);
    }

    if stores == 0 && report.reports.is_none() {
        return Err(CliError::Pipeline(format!("no corpus files found in {}", corpus_dir.display())));
    }
    write_json(&mut rec, store_dir.join("ingest-report.json"), &report)?;
    rec.finish(&store_dir)?;
    let chunks: usize = report.chunks.values().sum();
    let dups = report.reports.as_ref().map_or(0, |r| r.duplicates.len());
    Ok(format!("{stores} corpus stores, {chunks} chunks, {dups} duplicate reports removed"))
}

pub fn index(loaded: &Loaded) -> Result<String, CliError> {
    let store_dir = loaded.store_dir();
    if !store_dir.is_dir() {
        return Err(CliError::Config(format!("store_dir {} does not exist; run ingest", store_dir.display())));
    }
    let index_dir = loaded.index_dir();
    let mut rec = Recorder::new(&loaded.base, "index", &loaded.hash);
    let cache = loaded.cache()?;
    let mut built = Vec::new();

    let stores: Vec<(CorpusId, std::path::PathBuf)> = CorpusId::UNSTRUCTURED
        .into_iter()
        .map(|c| (c, chunk_store_path(&store_dir, c)))
        .filter(|(_, p)| p.exists())
        .collect();
    let reports_path = report_store_path(&store_dir);
    let text_embedder = if stores.is_empty() { None } else { Some(loaded.gateway(Role::TextEmbed, &cache)?) };
    let image_embedder =
        if reports_path.exists() { Some(loaded.gateway(Role::ImageEmbed, &cache)?) } else { None };
    create_dir(&index_dir)?;

    if let Some(embedder) = &text_embedder {
        for (corpus, path) in &stores {
            let store = load_chunk_store(path).map_err(|e| CliError::Pipeline(e.to_string()))?;
            rec.input(path.clone());
            if store.is_empty() {
                continue;
            }
            let texts: Vec<String> = store.chunks().iter().map(|c| c.text.clone()).collect();
            let vectors = embedder
                .embed_texts(&texts)
                .map_err(|e| CliError::Pipeline(format!("embedding {corpus}: {e}")))?;
            let dims = vectors[0].dims();
            let index = DenseIndex::build(
                embedder.model_id(),
                dims,
                store.chunks().iter().zip(vectors).map(|(c, v)| (c.chunk_id.clone(), v.into_inner())),
            )
            .map_err(|e| CliError::Pipeline(format!("{corpus} index: {e}")))?;
            let out = text_index_path(&index_dir, *corpus);
            index.save(&out).map_err(|e| CliError::Pipeline(e.to_string()))?;
            rec.output(out);
            built.push(format!("{corpus}={}", index.len()));
        }
    }

    if let Some(embedder) = &image_embedder {
        let entries = load_report_store(&reports_path).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.input(reports_path.clone());
        let corpus_dir = loaded.corpus_dir();
        let mut grouped: BTreeMap<Modality, Vec<(String, Vec<f64>)>> = BTreeMap::new();
        for e in &entries {
            let image = ImageRef::Path(corpus_dir.join(&e.image_ref));
            let v = embedder
                .embed_image(&image)
                .map_err(|err| CliError::Pipeline(format!("report {}: {err}", e.report_id)))?;
            grouped.entry(e.modality).or_default().push((e.report_id.clone(), v.into_inner()));
        }
        for (modality, items) in grouped {
            let dims = items[0].1.len();
            let n = items.len();
            let index = DenseIndex::build(embedder.model_id(), dims, items)
                .map_err(|e| CliError::Pipeline(format!("{modality} report index: {e}")))?;
            let out = report_index_path(&index_dir, modality);
            index.save(&out).map_err(|e| CliError::Pipeline(e.to_string()))?;
            rec.output(out);
            built.push(format!("reports.{modality}={n}"));
        }
    }

    if built.is_empty() {
        return Err(CliError::Pipeline(format!("nothing to index in {}", store_dir.display())));
    }
    rec.finish(&index_dir)?;
    Ok(format!("indexed {}", built.join(", ")))
}
