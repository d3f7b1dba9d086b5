use serde::{Deserialize, Serialize};

use super::overlap::{bleu, rouge_l};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMetric {
    Bleu,
    RougeL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessConfig {
    /// Open answers are correct when the mean metric exceeds this.
    pub alpha_r: f64,
    pub metrics: Vec<TextMetric>,
}

impl Default for CorrectnessConfig {
    fn default() -> Self {
        Self { alpha_r: 0.5, metrics: vec![TextMetric::Bleu, TextMetric::RougeL] }
    }
}

/// First whitespace token of the form `X`, `X.`, `X)`, `(X)` or `(X` with
/// `X` an uppercase ASCII letter.
pub fn extract_option_letter(answer: &str) -> Option<char> {
    answer.split_whitespace().find_map(|tok| {
        let t = tok.strip_prefix('(').unwrap_or(tok);
        let t = t.strip_suffix('.').or_else(|| t.strip_suffix(')')).unwrap_or(t);
        let mut chars = t.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => Some(c),
            _ => None,
        }
    })
}

fn gold_letter(gold: &str) -> Option<char> {
    let g = gold.trim();
    let mut chars = g.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => extract_option_letter(g),
    }
}

pub fn is_correct(answer: &str, gold: &str, kind: TaskKind, cfg: &CorrectnessConfig) -> bool {
    match kind {
        TaskKind::Closed => match (extract_option_letter(answer), gold_letter(gold)) {
            (Some(a), Some(g)) => a == g,
            _ => false,
        },
        TaskKind::Open => {
            if cfg.metrics.is_empty() {
                return false;
            }
            let total: f64 = cfg
                .metrics
                .iter()
                .map(|m| match m {
                    TextMetric::Bleu => bleu(answer, &[gold], 4),
                    TextMetric::RougeL => rouge_l(answer, gold),
                })
                .sum();
            total / cfg.metrics.len() as f64 > cfg.alpha_r
        }
    }
}
