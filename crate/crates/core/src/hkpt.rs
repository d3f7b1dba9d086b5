//! Preference-pair construction over a five-context outcome matrix and
//! the pairwise preference loss.
//!
//! Each sample is answered under the full context `(v, t, K)`, with the
//! least similar same-modality image `(v*, t, K)`, without reports, without
//! documents, and with no retrieved knowledge at all. Pairs are then
//! emitted by a sequential fold over the completed matrix.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{is_correct, CorrectnessConfig, RunRow};
use crate::gateway::{Embedding, Gateway, GenerationRequest};
use crate::prompts::{render_context_prompt, KnowledgeBundle};
use crate::sample::Sample;

#[derive(Debug, thiserror::Error)]
pub enum HkptError {
    #[error("input error: {0}")]
    Input(String),
}

/// The five answer contexts, in call order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Full,
    Irrelevant,
    NoReports,
    NoDocs,
    Empty,
}

impl Context {
    pub const ALL: [Context; 5] = [
        Context::Full,
        Context::Irrelevant,
        Context::NoReports,
        Context::NoDocs,
        Context::Empty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Context::Full => "full",
            Context::Irrelevant => "irrelevant",
            Context::NoReports => "no_reports",
            Context::NoDocs => "no_docs",
            Context::Empty => "empty",
        }
    }

    fn knowledge(self, k: &KnowledgeBundle) -> KnowledgeBundle {
        match self {
            Context::Full | Context::Irrelevant => k.clone(),
            Context::NoReports => k.without_reports(),
            Context::NoDocs => k.without_documents(),
            Context::Empty => KnowledgeBundle::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairCategory {
    #[serde(rename = "CMA")]
    Cma,
    #[serde(rename = "KU")]
    Ku,
    #[serde(rename = "KR")]
    Kr,
}

/// Which part of the knowledge is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KSubset {
    #[serde(rename = "reports")]
    Reports,
    #[serde(rename = "documents")]
    Documents,
    #[serde(rename = "reports+documents")]
    Both,
}

impl KSubset {
    pub const ALL: [KSubset; 3] = [KSubset::Reports, KSubset::Documents, KSubset::Both];

    /// The context with this subset removed from `K`.
    pub fn context(self) -> Context {
        match self {
            KSubset::Reports => Context::NoReports,
            KSubset::Documents => Context::NoDocs,
            KSubset::Both => Context::Empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub sample_id: String,
    pub category: PairCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_subset: Option<KSubset>,
    pub image_ref_w: String,
    pub image_ref_l: String,
    pub question: String,
    pub bundle_w_ref: String,
    pub bundle_l_ref: String,
    pub chosen_text: String,
    pub rejected_text: String,
}

/// Answers and correctness of one sample, indexed like [`Context::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRow {
    pub sample_id: String,
    pub irrelevant_sample_id: String,
    pub answers: [String; 5],
    pub correct: [bool; 5],
}

impl OutcomeRow {
    pub fn answer(&self, c: Context) -> &str {
        &self.answers[c as usize]
    }

    pub fn is_correct(&self, c: Context) -> bool {
        self.correct[c as usize]
    }

    pub fn to_run_row(&self) -> RunRow {
        RunRow {
            sample_id: self.sample_id.clone(),
            original: Some(self.is_correct(Context::Full)),
            irrelevant: Some(self.is_correct(Context::Irrelevant)),
            no_retrieval: Some(self.is_correct(Context::Empty)),
            with_report_only: Some(self.is_correct(Context::NoDocs)),
            with_doc_only: Some(self.is_correct(Context::NoReports)),
            with_both: Some(self.is_correct(Context::Full)),
        }
    }
}

/// Audit line of the outcome matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub sample_id: String,
    pub irrelevant_sample_id: String,
    pub full: bool,
    pub irrelevant: bool,
    pub no_reports: bool,
    pub no_docs: bool,
    pub empty: bool,
    /// The irrelevant-image answer equals the gold text verbatim.
    pub cma_rejected_equals_chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HkptOutput {
    pub d_cm: Vec<PreferencePair>,
    pub d_mk: Vec<PreferencePair>,
    pub outcomes: Vec<OutcomeRow>,
    pub skipped: Vec<SkippedSample>,
}

impl HkptOutput {
    pub fn outcome_records(&self, samples: &[Sample]) -> Vec<OutcomeRecord> {
        let gold: BTreeMap<&str, &str> = samples.iter().map(|s| (s.sample_id.as_str(), s.gold.as_str())).collect();
        self.outcomes
            .iter()
            .map(|o| OutcomeRecord {
                sample_id: o.sample_id.clone(),
                irrelevant_sample_id: o.irrelevant_sample_id.clone(),
                full: o.is_correct(Context::Full),
                irrelevant: o.is_correct(Context::Irrelevant),
                no_reports: o.is_correct(Context::NoReports),
                no_docs: o.is_correct(Context::NoDocs),
                empty: o.is_correct(Context::Empty),
                cma_rejected_equals_chosen: gold.get(o.sample_id.as_str()) == Some(&o.answer(Context::Irrelevant)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HkptConfig {
    pub correctness: CorrectnessConfig,
    pub workers: usize,
}

impl Default for HkptConfig {
    fn default() -> Self {
        Self { correctness: CorrectnessConfig::default(), workers: 4 }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Id of the candidate least cosine-similar to `target`; equal
/// similarities go to the smaller id.
pub fn least_similar<'a>(target: &[f64], pool: &[(&'a str, &[f64])]) -> Result<&'a str, HkptError> {
    pool.iter()
        .map(|&(id, v)| (id, cosine(target, v)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(b.0)))
        .map(|(id, _)| id)
        .ok_or_else(|| HkptError::Input("irrelevant-image pool is empty".into()))
}

/// Embeds `sample`'s image and every pool image and returns the sample id
/// of the least similar pool member. The pool must not contain `sample`.
pub fn select_irrelevant_image<'a>(
    sample: &Sample,
    pool: &'a [Sample],
    base: &Path,
    image_embedder: &Gateway,
) -> Result<&'a Sample, HkptError> {
    if pool.iter().any(|p| p.sample_id == sample.sample_id) {
        return Err(HkptError::Input("pool contains the sample itself".into()));
    }
    let embed = |s: &Sample| {
        image_embedder
            .embed_image(&s.image(base))
            .map_err(|e| HkptError::Input(format!("{}: {e}", s.sample_id)))
    };
    let target = embed(sample)?;
    let vectors: Vec<Embedding> = pool.iter().map(embed).collect::<Result<_, _>>()?;
    let entries: Vec<(&str, &[f64])> = pool
        .iter()
        .zip(&vectors)
        .map(|(s, v)| (s.sample_id.as_str(), v.values()))
        .collect();
    let id = least_similar(target.values(), &entries)?;
    Ok(pool.iter().find(|s| s.sample_id == id).expect("id from pool"))
}

fn bundle_ref(sample_id: &str, context: Context) -> String {
    format!("{sample_id}#{}", context.as_str())
}

/// The pair-emission fold for one completed row.
pub fn pairs_for(sample: &Sample, irrelevant: &Sample, row: &OutcomeRow) -> Vec<PreferencePair> {
    let pair = |category, k_subset, image_l: &Sample, rejected: &str| PreferencePair {
        sample_id: sample.sample_id.clone(),
        category,
        k_subset,
        image_ref_w: sample.image_ref.clone(),
        image_ref_l: image_l.image_ref.clone(),
        question: sample.question.clone(),
        bundle_w_ref: bundle_ref(&sample.sample_id, Context::Full),
        bundle_l_ref: bundle_ref(&sample.sample_id, Context::Full),
        chosen_text: sample.gold.clone(),
        rejected_text: rejected.to_string(),
    };
    let full = row.is_correct(Context::Full);
    let mut out = Vec::new();
    if full && row.is_correct(Context::Irrelevant) {
        out.push(pair(PairCategory::Cma, None, irrelevant, row.answer(Context::Irrelevant)));
    }
    let mut ku = Vec::new();
    let mut kr = Vec::new();
    for k in KSubset::ALL {
        let without = row.is_correct(k.context());
        if full && !without {
            ku.push(pair(PairCategory::Ku, Some(k), sample, row.answer(k.context())));
        }
        if without && !full {
            kr.push(pair(PairCategory::Kr, Some(k), sample, row.answer(Context::Full)));
        }
    }
    out.extend(ku);
    out.extend(kr);
    out
}

fn answer_all(
    sample: &Sample,
    irrelevant: &Sample,
    base: &Path,
    answerer: &Gateway,
    cfg: &CorrectnessConfig,
) -> Result<OutcomeRow, String> {
    let knowledge = sample.knowledge.clone().unwrap_or_default();
    let mut answers: [String; 5] = Default::default();
    let mut correct = [false; 5];
    for c in Context::ALL {
        let image = if c == Context::Irrelevant { irrelevant } else { sample };
        let prompt = render_context_prompt(&sample.question, &c.knowledge(&knowledge), sample.task);
        let answer = answerer
            .generate(&GenerationRequest::new(prompt, vec![image.image(base)]))
            .map_err(|e| format!("{} context: {e}", c.as_str()))?;
        correct[c as usize] = is_correct(&answer, &sample.gold, sample.task_kind(), cfg);
        answers[c as usize] = answer;
    }
    Ok(OutcomeRow {
        sample_id: sample.sample_id.clone(),
        irrelevant_sample_id: irrelevant.sample_id.clone(),
        answers,
        correct,
    })
}

/// Populates the outcome matrix (five answerer calls per sample, samples
/// in parallel) and folds it into the two pair sets. A sample with any
/// failed call or without a same-modality partner is skipped whole.
/// Outputs are ordered by sample id, then category, then removed subset.
pub fn build_preference_pairs(
    samples: &[Sample],
    base: &Path,
    answerer: &Gateway,
    image_embedder: &Gateway,
    cfg: &HkptConfig,
) -> Result<HkptOutput, HkptError> {
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
        return Err(HkptError::Input(format!("duplicate sample id '{}'", w[0].sample_id)));
    }
    if let Some(s) = sorted.iter().find(|s| s.knowledge.is_none()) {
        return Err(HkptError::Input(format!("sample '{}' has no knowledge bundle", s.sample_id)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| HkptError::Input(e.to_string()))?;

    pool.install(|| {
        let embeddings: Vec<Result<Embedding, String>> = sorted
            .par_iter()
            .map(|s| image_embedder.embed_image(&s.image(base)).map_err(|e| e.to_string()))
            .collect();

        let results: Vec<Result<(OutcomeRow, usize), String>> = sorted
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let target = embeddings[i].as_ref().map_err(|e| format!("image embedding: {e}"))?;
                let candidates: Vec<(&str, &[f64])> = sorted
                    .iter()
                    .zip(&embeddings)
                    .filter(|(o, _)| o.modality == s.modality && o.sample_id != s.sample_id)
                    .filter_map(|(o, e)| e.as_ref().ok().map(|e| (o.sample_id.as_str(), e.values())))
                    .collect();
                let id = least_similar(target.values(), &candidates).map_err(|e| e.to_string())?;
                let j = sorted.iter().position(|o| o.sample_id == id).expect("pool member");
                let row = answer_all(s, sorted[j], base, answerer, &cfg.correctness)?;
                Ok((row, j))
            })
            .collect();

        let mut out = HkptOutput::default();
        for (s, result) in sorted.iter().zip(results) {
            match result {
                Ok((row, j)) => {
                    for p in pairs_for(s, sorted[j], &row) {
                        match p.category {
                            PairCategory::Cma => out.d_cm.push(p),
                            PairCategory::Ku | PairCategory::Kr => out.d_mk.push(p),
                        }
                    }
                    out.outcomes.push(row);
                }
                Err(reason) => out.skipped.push(SkippedSample { sample_id: s.sample_id.clone(), reason }),
            }
        }
        Ok(out)
    })
}

/// `-log sigmoid(beta * ((w_policy - w_ref) - (l_policy - l_ref)))`,
/// evaluated without overflow.
pub fn dpo_loss(
    logp_w_policy: f64,
    logp_w_ref: f64,
    logp_l_policy: f64,
    logp_l_ref: f64,
    beta: f64,
) -> Result<f64, HkptError> {
    let inputs = [logp_w_policy, logp_w_ref, logp_l_policy, logp_l_ref, beta];
    if inputs.iter().any(|x| !x.is_finite()) {
        return Err(HkptError::Input("non-finite input".into()));
    }
    if beta <= 0.0 {
        return Err(HkptError::Input(format!("beta must be positive, got {beta}")));
    }
    let z = beta * ((logp_w_policy - logp_w_ref) - (logp_l_policy - logp_l_ref));
    Ok(if z >= 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() })
}
