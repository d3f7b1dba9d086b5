//! Retrieval and answer-quality metrics.
//!
//! Every ratio with an empty denominator is reported as undefined rather
//! than 0.

mod answer;
mod disalign;
mod overlap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use answer::{extract_option_letter, is_correct, CorrectnessConfig, TaskKind, TextMetric};
pub use disalign::{disalignment_metrics, Disalignment, RunRow};
pub use overlap::{bleu, rouge_l, BLEU_SMOOTHING};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("metric '{0}' is undefined on an empty input")]
    Undefined(&'static str),
    #[error("input error: {0}")]
    Input(String),
}

/// Fraction of queries whose gold id is among the first `k` results.
pub fn recall_at_k(ranked: &[Vec<String>], gold: &[String], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Input("k must be at least 1".into()));
    }
    if ranked.len() != gold.len() {
        return Err(EvalError::Input(format!("{} result lists for {} gold ids", ranked.len(), gold.len())));
    }
    if ranked.is_empty() {
        return Err(EvalError::Undefined("recall@k"));
    }
    let hits = ranked
        .iter()
        .zip(gold)
        .filter(|(r, g)| r.iter().take(k).any(|id| id == *g))
        .count();
    Ok(hits as f64 / ranked.len() as f64)
}

/// Closed-ended accuracy with option-letter extraction.
pub fn vqa_accuracy(predictions: &[String], golds: &[String]) -> Result<f64, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::Input(format!("{} predictions for {} golds", predictions.len(), golds.len())));
    }
    if predictions.is_empty() {
        return Err(EvalError::Undefined("vqa_accuracy"));
    }
    let cfg = CorrectnessConfig::default();
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| is_correct(p, g, TaskKind::Closed, &cfg))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JudgeQuality {
    pub accuracy: f64,
    /// `None` when there are no positives in either list.
    pub f1: Option<f64>,
}

/// Agreement of judge verdicts with gold labels, "supports" positive.
pub fn judge_quality(verdicts: &[bool], gold: &[bool]) -> Result<JudgeQuality, EvalError> {
    if verdicts.len() != gold.len() {
        return Err(EvalError::Input(format!("{} verdicts for {} labels", verdicts.len(), gold.len())));
    }
    if verdicts.is_empty() {
        return Err(EvalError::Undefined("judge_quality"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&v, &g) in verdicts.iter().zip(gold) {
        match (v, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / verdicts.len() as f64;
    let den = 2 * tp + fp + fn_;
    let f1 = (den > 0).then(|| 2.0 * tp as f64 / den as f64);
    Ok(JudgeQuality { accuracy, f1 })
}

/// One line of a metrics report; `value` is a number or `"undefined"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub metric: String,
    pub value: Value,
    pub n_samples: usize,
    pub config_hash: String,
}

impl MetricLine {
    pub fn new(metric: impl Into<String>, value: Option<f64>, n_samples: usize, config_hash: &str) -> Self {
        Self {
            metric: metric.into(),
            value: match value {
                Some(v) => Value::from(v),
                None => Value::from("undefined"),
            },
            n_samples,
            config_hash: config_hash.to_string(),
        }
    }
}
