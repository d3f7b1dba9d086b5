use polysource_core::prompts::render_context_prompt;
use polysource_core::query::{bundle_records, knowledge_bundle, BundleRecord};
use polysource_core::sample::Sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create_dir, file_stem, load_knowledge_base, load_samples, worker_pool, write_lines};
use crate::manifest::Recorder;
use crate::retriever::{Diagnostic, Retriever};
use crate::{CliError, Loaded};

/// Per-sample retrieval trace; `document_ids` are chunk ids in bundle
/// order, graph facts excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalLine {
    pub sample_id: String,
    pub query_set: String,
    pub document_ids: Vec<String>,
    pub report_ids: Vec<String>,
    pub diagnostics: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Skipped {
    sample_id: String,
    reason: String,
}

struct Done {
    bundle: Vec<BundleRecord>,
    trace: RetrievalLine,
    prompt: String,
}

fn one(r: &Retriever, s: &Sample, base: &std::path::Path) -> Result<Done, String> {
    let image = s.image(base);
    let (qs, diags) = r.generate_queries(&s.question, Some(&image))?;
    let got = r.run(qs, diags, Some(&image), Some(s.modality)).map_err(|e| e.to_string())?;
    let prompt = render_context_prompt(&s.question, &knowledge_bundle(&got.reports, &got.outcome.bundle), s.task);
    let diagnostics = got
        .diagnostics
        .iter()
        .map(|d: &Diagnostic| serde_json::to_value(d).expect("serializable"))
        .collect();
    Ok(Done {
        bundle: bundle_records(&s.sample_id, Some(s.modality), &got.reports, &got.outcome.bundle),
        trace: RetrievalLine {
            sample_id: s.sample_id.clone(),
            query_set: got.query_set.serialize(),
            document_ids: got.outcome.bundle.documents.iter().map(|d| d.chunk_id.clone()).collect(),
            report_ids: got.reports.iter().map(|r| r.report_id.clone()).collect(),
            diagnostics,
        },
        prompt,
    })
}

pub fn retrieve(loaded: &Loaded) -> Result<String, CliError> {
    let (mut samples, base) = load_samples(loaded)?;
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut rec = Recorder::new(&loaded.base, "retrieve", &loaded.hash);
    rec.input(loaded.existing("samples", loaded.config.samples.as_ref())?);
    let kb = load_knowledge_base(loaded, Some(&mut rec))?;
    let cache = loaded.cache()?;
    let retriever = Retriever::open(loaded, kb, &cache, true)?;

    let results: Vec<Result<Done, String>> = worker_pool(loaded.config.workers)?
        .install(|| samples.par_iter().map(|s| one(&retriever, s, &base)).collect());

    let out_dir = loaded.out_dir();
    let prompt_dir = out_dir.join("prompts");
    create_dir(&prompt_dir)?;
    let (mut bundles, mut traces, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(done) => {
                let path = prompt_dir.join(format!("{}.txt", file_stem(&s.sample_id)));
                std::fs::write(&path, &done.prompt)
                    .map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
                rec.output(path);
                bundles.extend(done.bundle);
                traces.push(done.trace);
            }
            Err(reason) => skipped.push(Skipped { sample_id: s.sample_id.clone(), reason }),
        }
    }
    write_lines(&mut rec, out_dir.join("bundles.jsonl"), &bundles)?;
    write_lines(&mut rec, out_dir.join("retrieval.jsonl"), &traces)?;
    write_lines(&mut rec, out_dir.join("retrieve-skipped.jsonl"), &skipped)?;
    rec.finish(&out_dir)?;
    Ok(format!("{} samples retrieved, {} skipped", traces.len(), skipped.len()))
}
