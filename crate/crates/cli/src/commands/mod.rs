mod eval;
mod ingest;
mod retrieve;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use polysource_core::corpus::{load_chunk_store, load_graph_store, load_report_store, CorpusId, Modality};
use polysource_core::jsonl;
use polysource_core::query::{KnowledgeBase, ReportIndex, TextCorpus};
use polysource_core::retrieval::DenseIndex;
use polysource_core::sample::Sample;
use serde::Serialize;

use crate::manifest::Recorder;
use crate::{CliError, Loaded};

pub use eval::eval;
pub use ingest::{index, ingest};
pub use retrieve::retrieve;
pub use train::{build_mqg_data, build_pairs, explore};

fn chunk_store_path(store_dir: &Path, corpus: CorpusId) -> PathBuf {
    store_dir.join(format!("{corpus}.chunks.jsonl"))
}

fn graph_dir(store_dir: &Path) -> PathBuf {
    store_dir.join("graph")
}

fn report_store_path(store_dir: &Path) -> PathBuf {
    store_dir.join("reports.jsonl")
}

fn text_index_path(index_dir: &Path, corpus: CorpusId) -> PathBuf {
    index_dir.join(format!("{corpus}.idx"))
}

fn report_index_path(index_dir: &Path, modality: Modality) -> PathBuf {
    index_dir.join(format!("reports.{modality}.idx"))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Pipeline(format!("cannot create {}: {e}", dir.display())))
}

fn write_lines<T: Serialize>(rec: &mut Recorder, path: PathBuf, records: &[T]) -> Result<(), CliError> {
    jsonl::write(&path, records).map_err(|e| CliError::Pipeline(e.to_string()))?;
    rec.output(path);
    Ok(())
}

fn write_json<T: Serialize>(rec: &mut Recorder, path: PathBuf, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
    rec.output(path);
    Ok(())
}

/// Samples plus the directory their image paths are relative to.
pub fn load_samples(loaded: &Loaded) -> Result<(Vec<Sample>, PathBuf), CliError> {
    let path = loaded.existing("samples", loaded.config.samples.as_ref())?;
    let samples: Vec<Sample> = jsonl::read(&path).map_err(|e| CliError::Pipeline(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.sample_id.as_str())) {
        return Err(CliError::Pipeline(format!("duplicate sample id '{}'", dup.sample_id)));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((samples, base))
}

/// Loads every store that has been ingested and indexed. Indices must
/// agree with their stores.
pub fn load_knowledge_base(loaded: &Loaded, rec: Option<&mut Recorder>) -> Result<KnowledgeBase, CliError> {
    let store_dir = loaded.store_dir();
    let index_dir = loaded.index_dir();
    let mut inputs = Vec::new();
    let mut corpora = BTreeMap::new();
    for corpus in CorpusId::UNSTRUCTURED {
        let (sp, ip) = (chunk_store_path(&store_dir, corpus), text_index_path(&index_dir, corpus));
        if !(sp.exists() && ip.exists()) {
            continue;
        }
        let store = load_chunk_store(&sp).map_err(|e| CliError::Pipeline(e.to_string()))?;
        let index = DenseIndex::load(&ip).map_err(|e| CliError::Pipeline(format!("{}: {e}", ip.display())))?;
        if let Some(id) = index.ids().iter().find(|id| store.get(id).is_none()) {
            return Err(CliError::Pipeline(format!(
                "index {} refers to chunk '{id}' missing from the store; re-run index",
                ip.display()
            )));
        }
        inputs.extend([sp, ip]);
        corpora.insert(corpus, TextCorpus { store, index });
    }

    let gdir = graph_dir(&store_dir);
    let graph = if gdir.is_dir() {
        let g = load_graph_store(&gdir).map_err(|e| CliError::Pipeline(e.to_string()))?;
        inputs.extend(
            [polysource_core::corpus::GRAPH_TERMS_FILE, polysource_core::corpus::GRAPH_RELATIONS_FILE]
                .map(|f| gdir.join(f)),
        );
        Some(g)
    } else {
        None
    };

    let rpath = report_store_path(&store_dir);
    let mut report_indices = BTreeMap::new();
    for m in Modality::ALL {
        let p = report_index_path(&index_dir, m);
        if p.exists() {
            let idx = DenseIndex::load(&p).map_err(|e| CliError::Pipeline(format!("{}: {e}", p.display())))?;
            inputs.push(p);
            report_indices.insert(m, idx);
        }
    }
    let reports = if rpath.exists() && !report_indices.is_empty() {
        let entries = load_report_store(&rpath).map_err(|e| CliError::Pipeline(e.to_string()))?;
        let texts: HashMap<String, String> =
            entries.into_iter().map(|e| (e.report_id, e.report_text)).collect();
        inputs.push(rpath);
        Some(ReportIndex::from_parts(report_indices, texts))
    } else {
        None
    };

    if corpora.is_empty() && graph.is_none() && reports.is_none() {
        return Err(CliError::Config(format!(
            "no ingested and indexed stores under {} / {}",
            store_dir.display(),
            index_dir.display()
        )));
    }
    if let Some(rec) = rec {
        for p in inputs {
            rec.input(p);
        }
    }
    Ok(KnowledgeBase { corpora, graph, reports })
}

/// Restricts a sample id to characters safe in a file name.
fn file_stem(sample_id: &str) -> String {
    sample_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn worker_pool(n: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| CliError::Pipeline(e.to_string()))
}
