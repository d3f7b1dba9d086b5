use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use polysource_core::exploration::{build_mqg_training, run_exploration, ExplorationConfig, ExplorationRecord};
use polysource_core::hkpt::{build_preference_pairs, HkptConfig};
use polysource_core::jsonl;
use polysource_core::prompts::{ContextDocument, KnowledgeBundle};
use polysource_core::query::{BundleKind, BundleRecord, ParseDiagnostic, QueryEngine};
use serde::{Deserialize, Serialize};

use super::{create_dir, load_knowledge_base, load_samples, write_json, write_lines};
use crate::config::Role;
use crate::manifest::Recorder;
use crate::{CliError, Loaded};

#[derive(Serialize)]
struct SampleDiagnostics<'a> {
    sample_id: &'a str,
    diagnostics: &'a [ParseDiagnostic],
}

pub fn explore(loaded: &Loaded) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let (samples, base) = load_samples(loaded)?;
    let mut rec = Recorder::new(&loaded.base, "explore", &loaded.hash);
    rec.input(loaded.existing("samples", cfg.samples.as_ref())?);
    let kb = load_knowledge_base(loaded, Some(&mut rec))?;
    let cache = loaded.cache()?;
    let text_embedder = loaded.gateway(Role::TextEmbed, &cache)?;
    let reranker = loaded.gateway(Role::Rerank, &cache)?;
    let expert = loaded.gateway(Role::Expert, &cache)?;
    let judge = loaded.gateway(Role::Judge, &cache)?;
    let engine = QueryEngine::new(&kb, &text_embedder, &reranker, cfg.retrieval_params())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let run = run_exploration(
        &samples,
        &base,
        &engine,
        &expert,
        &judge,
        ExplorationConfig { queries_per_corpus: cfg.queries_per_corpus, workers: cfg.workers },
    )
    .map_err(CliError::Pipeline)?;

    let out_dir = loaded.out_dir();
    create_dir(&out_dir)?;
    write_lines(&mut rec, out_dir.join("exploration.jsonl"), &run.records)?;
    write_lines(&mut rec, out_dir.join("exploration-skipped.jsonl"), &run.skipped)?;
    let diags: Vec<SampleDiagnostics> = run
        .diagnostics
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(id, d)| SampleDiagnostics { sample_id: id, diagnostics: d })
        .collect();
    write_lines(&mut rec, out_dir.join("exploration-diagnostics.jsonl"), &diags)?;
    rec.finish(&out_dir)?;
    Ok(format!(
        "{} labelled queries over {} samples, {} skipped",
        run.records.len(),
        samples.len() - run.skipped.len(),
        run.skipped.len()
    ))
}

pub fn build_mqg_data(loaded: &Loaded) -> Result<String, CliError> {
    let n_q = loaded.config.n_q.ok_or_else(|| CliError::Config("'n_q' must be set for build-mqg-data".into()))?;
    let (samples, _) = load_samples(loaded)?;
    let out_dir = loaded.out_dir();
    let exploration = out_dir.join("exploration.jsonl");
    if !exploration.exists() {
        return Err(CliError::Config(format!("{} is missing; run explore first", exploration.display())));
    }
    let mut rec = Recorder::new(&loaded.base, "build-mqg-data", &loaded.hash);
    rec.input(loaded.existing("samples", loaded.config.samples.as_ref())?);
    let records: Vec<ExplorationRecord> =
        jsonl::read(&exploration).map_err(|e| CliError::Pipeline(e.to_string()))?;
    rec.input(exploration);
    let data = build_mqg_training(&samples, &records, n_q);
    write_lines(&mut rec, out_dir.join("mqg-sft.jsonl"), &data.sft)?;
    write_lines(&mut rec, out_dir.join("mqg-dpo.jsonl"), &data.dpo)?;
    write_json(&mut rec, out_dir.join("mqg-stats.json"), &data.stats)?;
    rec.finish(&out_dir)?;
    Ok(format!("{} SFT and {} DPO examples", data.sft.len(), data.dpo.len()))
}

#[derive(Debug, Serialize, Deserialize)]
struct Skipped {
    sample_id: String,
    reason: String,
}

/// Rebuilds knowledge bundles from retrieve output. Samples the retrieve
/// run skipped are returned separately.
fn bundles_from_file(
    path: &Path,
    rec: &mut Recorder,
) -> Result<(BTreeMap<String, KnowledgeBundle>, HashSet<String>), CliError> {
    let lines: Vec<BundleRecord> = jsonl::read(path).map_err(|e| CliError::Pipeline(e.to_string()))?;
    rec.input(path.to_path_buf());
    let mut out: BTreeMap<String, KnowledgeBundle> = BTreeMap::new();
    for l in lines {
        let k = out.entry(l.sample_id).or_default();
        match l.kind {
            BundleKind::Report => k.reports.push(l.text),
            BundleKind::Document | BundleKind::GraphFact => {
                k.documents.push(ContextDocument { provenance: l.corpus, text: l.text })
            }
        }
    }
    let mut skipped = HashSet::new();
    let skip_file = path.with_file_name("retrieve-skipped.jsonl");
    if skip_file.exists() {
        let s: Vec<Skipped> = jsonl::read(&skip_file).map_err(|e| CliError::Pipeline(e.to_string()))?;
        rec.input(skip_file);
        skipped.extend(s.into_iter().map(|s| s.sample_id));
    }
    Ok((out, skipped))
}

pub fn build_pairs(loaded: &Loaded) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let (samples, base) = load_samples(loaded)?;
    let mut rec = Recorder::new(&loaded.base, "build-pairs", &loaded.hash);
    rec.input(loaded.existing("samples", cfg.samples.as_ref())?);
    let out_dir = loaded.out_dir();

    let mut skipped = Vec::new();
    let mut ready = Vec::new();
    let needs_file = samples.iter().any(|s| s.knowledge.is_none());
    let (bundles, retrieve_skipped) = if needs_file {
        let path = match &cfg.bundles {
            Some(p) => loaded.existing("bundles", Some(p))?,
            None => {
                let p = out_dir.join("bundles.jsonl");
                if !p.exists() {
                    return Err(CliError::Config(format!(
                        "samples lack inline knowledge and {} is missing; run retrieve or set 'bundles'",
                        p.display()
                    )));
                }
                p
            }
        };
        bundles_from_file(&path, &mut rec)?
    } else {
        Default::default()
    };
    for mut s in samples {
        if s.knowledge.is_none() {
            if retrieve_skipped.contains(&s.sample_id) {
                skipped.push(Skipped { sample_id: s.sample_id, reason: "skipped by retrieve".into() });
                continue;
            }
            // retrieve wrote nothing for this sample: empty context
            s.knowledge = Some(bundles.get(&s.sample_id).cloned().unwrap_or_default());
        }
        ready.push(s);
    }

    let cache = loaded.cache()?;
    let answerer = loaded.gateway(Role::Answerer, &cache)?;
    let image_embedder = loaded.gateway(Role::ImageEmbed, &cache)?;
    let hk = HkptConfig { correctness: cfg.correctness(), workers: cfg.workers };
    let out = build_preference_pairs(&ready, &base, &answerer, &image_embedder, &hk)
        .map_err(|e| CliError::Pipeline(e.to_string()))?;
    skipped.extend(out.skipped.iter().map(|s| Skipped { sample_id: s.sample_id.clone(), reason: s.reason.clone() }));
    skipped.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    create_dir(&out_dir)?;
    write_lines(&mut rec, out_dir.join("d_cm.jsonl"), &out.d_cm)?;
    write_lines(&mut rec, out_dir.join("d_mk.jsonl"), &out.d_mk)?;
    write_lines(&mut rec, out_dir.join("outcomes.jsonl"), &out.outcome_records(&ready))?;
    let matrix: Vec<_> = out.outcomes.iter().map(|o| o.to_run_row()).collect();
    write_lines(&mut rec, out_dir.join("run-matrix.jsonl"), &matrix)?;
    write_lines(&mut rec, out_dir.join("pairs-skipped.jsonl"), &skipped)?;
    rec.finish(&out_dir)?;
    Ok(format!(
        "{} cross-modality and {} knowledge pairs from {} samples, {} skipped",
        out.d_cm.len(),
        out.d_mk.len(),
        out.outcomes.len(),
        skipped.len()
    ))
}
