//! Query exploration with an expert model, judge labelling, and export of
//! query-generator training data.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusId;
use crate::gateway::{Gateway, GenerationRequest};
use crate::prompts::{render_exploration_prompt, render_judge_prompt, ContextDocument};
use crate::query::{
    parse_query_output_with, retrieve_graph, CorpusQuery, ParseDiagnostic, ParseLimits, ParseMode,
    QueryEngine, QueryEntry, QuerySet,
};
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// Only set when `parse_ok`.
    pub supports: Option<bool>,
    pub raw_response: String,
    pub parse_ok: bool,
}

/// Reads the last `<answer>...</answer>` (tags matched case-insensitively);
/// its trimmed content must be `yes` or `no` in any case.
pub fn parse_judge_response(raw: &str) -> JudgeVerdict {
    let lower = raw.to_ascii_lowercase();
    let supports = lower.rfind("<answer>").and_then(|start| {
        let body = &lower[start + "<answer>".len()..];
        let end = body.find("</answer>")?;
        match body[..end].trim() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    });
    JudgeVerdict { supports, raw_response: raw.to_string(), parse_ok: supports.is_some() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRecord {
    pub sample_id: String,
    pub corpus: CorpusId,
    pub j: usize,
    pub query: CorpusQuery,
    pub documents: Vec<ContextDocument>,
    pub verdict: Option<JudgeVerdict>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSkip {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplorationRun {
    /// Sorted by sample id, then corpus, then `j`.
    pub records: Vec<ExplorationRecord>,
    pub skipped: Vec<SampleSkip>,
    pub diagnostics: BTreeMap<String, Vec<ParseDiagnostic>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub queries_per_corpus: usize,
    pub workers: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self { queries_per_corpus: 6, workers: 4 }
    }
}

/// Asks the expert for queries and parses them in exploration mode. Output
/// with none of the five tags is an error; under-generation is not.
pub fn explore_queries(
    sample: &Sample,
    base: &Path,
    expert: &Gateway,
    per_corpus: usize,
) -> Result<(QuerySet, Vec<ParseDiagnostic>), String> {
    let prompt = render_exploration_prompt(&sample.question);
    let raw = expert
        .generate(&GenerationRequest::new(prompt, vec![sample.image(base)]))
        .map_err(|e| format!("expert generation failed: {e}"))?;
    let limits = ParseLimits { max_per_corpus: per_corpus, ..ParseLimits::default() };
    let parsed = parse_query_output_with(&raw, ParseMode::Exploration, limits);
    if parsed.no_tags() {
        return Err("expert output contains no query tags".into());
    }
    Ok((parsed.queries, parsed.diagnostics))
}

/// Judges whether `docs` support the gold answer. Empty `docs` are a
/// negative without a judge call.
pub fn judge_support(
    sample: &Sample,
    docs: &[ContextDocument],
    base: &Path,
    judge: &Gateway,
) -> Result<JudgeVerdict, String> {
    if docs.is_empty() {
        return Ok(JudgeVerdict { supports: Some(false), raw_response: String::new(), parse_ok: true });
    }
    let prompt = render_judge_prompt(&sample.question, &sample.gold, docs);
    let raw = judge
        .generate(&GenerationRequest::new(prompt, vec![sample.image(base)]))
        .map_err(|e| format!("judge generation failed: {e}"))?;
    Ok(parse_judge_response(&raw))
}

fn retrieve_for(engine: &QueryEngine<'_>, entry: &QueryEntry) -> Result<Vec<ContextDocument>, String> {
    match &entry.query {
        CorpusQuery::Text(text) => match engine.retrieve_text(entry.corpus, text) {
            Ok(Some(chunks)) => Ok(chunks
                .into_iter()
                .map(|c| ContextDocument { provenance: c.corpus.to_string(), text: c.text })
                .collect()),
            Ok(None) => Err(format!("no index for corpus {}", entry.corpus)),
            Err(e) => Err(format!("retrieval failed: {e}")),
        },
        CorpusQuery::Graph { term, relation } => {
            let graph = engine.kb.graph.as_ref().ok_or("no graph store loaded")?;
            let facts = retrieve_graph(term, relation, graph, engine.reranker, engine.params.graph_top_relations)
                .map_err(|e| format!("retrieval failed: {e}"))?;
            Ok(facts
                .map(|f| {
                    f.lines()
                        .into_iter()
                        .map(|text| ContextDocument { provenance: CorpusId::Graph.to_string(), text })
                        .collect()
                })
                .unwrap_or_default())
        }
    }
}

fn label_query(
    sample: &Sample,
    entry: &QueryEntry,
    base: &Path,
    engine: &QueryEngine<'_>,
    judge: &Gateway,
) -> ExplorationRecord {
    let mut record = ExplorationRecord {
        sample_id: sample.sample_id.clone(),
        corpus: entry.corpus,
        j: entry.j,
        query: entry.query.clone(),
        documents: Vec::new(),
        verdict: None,
        label: Label::Excluded,
        reason: None,
    };
    let docs = match retrieve_for(engine, entry) {
        Ok(d) => d,
        Err(reason) => {
            record.reason = Some(reason);
            return record;
        }
    };
    record.documents = docs;
    match judge_support(sample, &record.documents, base, judge) {
        Ok(v) => {
            match v.supports {
                Some(true) => record.label = Label::Positive,
                Some(false) => {
                    record.label = Label::Negative;
                    if record.documents.is_empty() {
                        record.reason = Some("empty retrieval".into());
                    }
                }
                None => record.reason = Some("judge response has no usable answer tag".into()),
            }
            record.verdict = Some(v);
        }
        Err(reason) => record.reason = Some(reason),
    }
    record
}

/// Explores, retrieves and judges every sample on a bounded worker pool.
pub fn run_exploration(
    samples: &[Sample],
    base: &Path,
    engine: &QueryEngine<'_>,
    expert: &Gateway,
    judge: &Gateway,
    cfg: ExplorationConfig,
) -> Result<ExplorationRun, String> {
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
        return Err(format!("duplicate sample id '{}'", w[0].sample_id));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let per_sample: Vec<_> = pool.install(|| {
        sorted
            .par_iter()
            .map(|s| {
                let (qs, diags) = explore_queries(s, base, expert, cfg.queries_per_corpus)?;
                let records: Vec<ExplorationRecord> = qs
                    .entries()
                    .iter()
                    .map(|e| label_query(s, e, base, engine, judge))
                    .collect();
                Ok::<_, String>((records, diags))
            })
            .collect()
    });
    let mut run = ExplorationRun::default();
    for (s, result) in sorted.iter().zip(per_sample) {
        match result {
            Ok((records, diags)) => {
                run.records.extend(records);
                if !diags.is_empty() {
                    run.diagnostics.insert(s.sample_id.clone(), diags);
                }
            }
            Err(reason) => run.skipped.push(SampleSkip { sample_id: s.sample_id.clone(), reason }),
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub image_ref: String,
    pub question: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoExample {
    pub image_ref: String,
    pub question: String,
    pub chosen_text: String,
    pub rejected_text: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub positive: usize,
    pub negative: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MqgStats {
    pub per_corpus: BTreeMap<CorpusId, LabelCounts>,
    pub samples: usize,
    pub sft_examples: usize,
    pub dpo_examples: usize,
    pub without_positive: usize,
    pub without_negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MqgTrainingData {
    pub sft: Vec<SftExample>,
    pub dpo: Vec<DpoExample>,
    pub stats: MqgStats,
}

/// For each sample (by id) takes, per corpus, the first `n_q` positives
/// and the first `n_q` negatives in exploration order. Samples without
/// positives get no SFT example; samples missing either side get no DPO
/// example.
pub fn build_mqg_training(samples: &[Sample], records: &[ExplorationRecord], n_q: usize) -> MqgTrainingData {
    let mut by_sample: BTreeMap<&str, Vec<&ExplorationRecord>> = BTreeMap::new();
    for r in records {
        by_sample.entry(r.sample_id.as_str()).or_default().push(r);
    }
    let lookup: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut out = MqgTrainingData::default();
    for (sample_id, mut recs) in by_sample {
        recs.sort_by_key(|r| (r.corpus, r.j));
        out.stats.samples += 1;
        let mut chosen = QuerySet::new();
        let mut rejected = QuerySet::new();
        for corpus in CorpusId::ALL {
            let counts = out.stats.per_corpus.entry(corpus).or_default();
            let mut taken = (0usize, 0usize);
            for r in recs.iter().filter(|r| r.corpus == corpus) {
                match r.label {
                    Label::Positive => {
                        counts.positive += 1;
                        if taken.0 < n_q {
                            taken.0 += 1;
                            chosen.push(corpus, r.query.clone());
                        }
                    }
                    Label::Negative => {
                        counts.negative += 1;
                        if taken.1 < n_q {
                            taken.1 += 1;
                            rejected.push(corpus, r.query.clone());
                        }
                    }
                    Label::Excluded => counts.excluded += 1,
                }
            }
        }
        if chosen.is_empty() {
            out.stats.without_positive += 1;
        }
        if rejected.is_empty() {
            out.stats.without_negative += 1;
        }
        let Some(sample) = lookup.get(sample_id) else {
            continue;
        };
        if !chosen.is_empty() {
            out.sft.push(SftExample {
                image_ref: sample.image_ref.clone(),
                question: sample.question.clone(),
                target_text: chosen.serialize(),
            });
            if !rejected.is_empty() {
                out.dpo.push(DpoExample {
                    image_ref: sample.image_ref.clone(),
                    question: sample.question.clone(),
                    chosen_text: chosen.serialize(),
                    rejected_text: rejected.serialize(),
                });
            }
        }
    }
    out.stats.sft_examples = out.sft.len();
    out.stats.dpo_examples = out.dpo.len();
    out
}
