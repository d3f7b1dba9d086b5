use std::collections::HashMap;

use polysource_core::eval::{
    bleu, disalignment_metrics, is_correct, judge_quality, recall_at_k, rouge_l, vqa_accuracy, EvalError,
    MetricLine, RunRow, TaskKind,
};
use polysource_core::jsonl;
use serde::Deserialize;

use super::{create_dir, load_samples, write_lines};
use crate::manifest::Recorder;
use crate::{CliError, Loaded};

#[derive(Debug, Deserialize)]
struct Prediction {
    sample_id: String,
    prediction: String,
}

#[derive(Debug, Deserialize)]
struct RankedQuery {
    ranked: Vec<String>,
    gold: String,
}

#[derive(Debug, Deserialize)]
struct Judgement {
    verdict: bool,
    gold: bool,
}

fn defined(r: Result<f64, EvalError>) -> Result<Option<f64>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::Undefined(_)) => Ok(None),
        Err(e) => Err(CliError::Pipeline(e.to_string())),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn read<T: serde::de::DeserializeOwned>(
    loaded: &Loaded,
    key: &str,
    value: Option<&std::path::PathBuf>,
    rec: &mut Recorder,
) -> Result<Vec<T>, CliError> {
    let path = loaded.existing(key, value)?;
    let v = jsonl::read(&path).map_err(|e| CliError::Pipeline(e.to_string()))?;
    rec.input(path);
    Ok(v)
}

fn answer_metrics(loaded: &Loaded, rec: &mut Recorder, lines: &mut Vec<MetricLine>) -> Result<(), CliError> {
    let cfg = &loaded.config;
    let hash = &loaded.hash;
    let (samples, _) = load_samples(loaded)?;
    rec.input(loaded.existing("samples", cfg.samples.as_ref())?);
    let preds: Vec<Prediction> = read(loaded, "eval_predictions", cfg.eval_predictions.as_ref(), rec)?;
    let by_id: HashMap<&str, _> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();

    let (mut closed_p, mut closed_g) = (Vec::new(), Vec::new());
    let (mut b, mut r, mut ok) = (Vec::new(), Vec::new(), Vec::new());
    let correctness = cfg.correctness();
    for p in &preds {
        let s = by_id
            .get(p.sample_id.as_str())
            .ok_or_else(|| CliError::Pipeline(format!("prediction for unknown sample '{}'", p.sample_id)))?;
        match s.task_kind() {
            TaskKind::Closed => {
                closed_p.push(p.prediction.clone());
                closed_g.push(s.gold.clone());
            }
            TaskKind::Open => {
                b.push(bleu(&p.prediction, &[s.gold.as_str()], 4));
                r.push(rouge_l(&p.prediction, &s.gold));
                ok.push(if is_correct(&p.prediction, &s.gold, TaskKind::Open, &correctness) { 1.0 } else { 0.0 });
            }
        }
    }
    lines.push(MetricLine::new("vqa_accuracy", defined(vqa_accuracy(&closed_p, &closed_g))?, closed_p.len(), hash));
    lines.push(MetricLine::new("bleu", mean(&b), b.len(), hash));
    lines.push(MetricLine::new("rouge_l", mean(&r), r.len(), hash));
    lines.push(MetricLine::new("open_accuracy", mean(&ok), ok.len(), hash));
    Ok(())
}

pub fn eval(loaded: &Loaded) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let hash = &loaded.hash;
    if cfg.eval_predictions.is_none()
        && cfg.eval_run_matrix.is_none()
        && cfg.eval_retrieval.is_none()
        && cfg.eval_judgements.is_none()
    {
        return Err(CliError::Config(
            "set at least one of eval_predictions, eval_run_matrix, eval_retrieval, eval_judgements".into(),
        ));
    }
    let mut rec = Recorder::new(&loaded.base, "eval", hash);
    let mut lines = Vec::new();

    if cfg.eval_predictions.is_some() {
        answer_metrics(loaded, &mut rec, &mut lines)?;
    }
    if cfg.eval_run_matrix.is_some() {
        let rows: Vec<RunRow> = read(loaded, "eval_run_matrix", cfg.eval_run_matrix.as_ref(), &mut rec)?;
        let d = disalignment_metrics(&rows).map_err(|e| CliError::Pipeline(e.to_string()))?;
        for (name, v) in [("md", d.md), ("kud", d.kud), ("kid", d.kid)] {
            lines.push(MetricLine::new(name, v, rows.len(), hash));
        }
    }
    if cfg.eval_retrieval.is_some() {
        let queries: Vec<RankedQuery> = read(loaded, "eval_retrieval", cfg.eval_retrieval.as_ref(), &mut rec)?;
        let ranked: Vec<Vec<String>> = queries.iter().map(|q| q.ranked.clone()).collect();
        let gold: Vec<String> = queries.iter().map(|q| q.gold.clone()).collect();
        for &k in &cfg.recall_ks {
            let v = defined(recall_at_k(&ranked, &gold, k))?;
            lines.push(MetricLine::new(format!("recall@{k}"), v, queries.len(), hash));
        }
    }
    if cfg.eval_judgements.is_some() {
        let js: Vec<Judgement> = read(loaded, "eval_judgements", cfg.eval_judgements.as_ref(), &mut rec)?;
        let verdicts: Vec<bool> = js.iter().map(|j| j.verdict).collect();
        let gold: Vec<bool> = js.iter().map(|j| j.gold).collect();
        let (acc, f1) = match judge_quality(&verdicts, &gold) {
            Ok(q) => (Some(q.accuracy), q.f1),
            Err(EvalError::Undefined(_)) => (None, None),
            Err(e) => return Err(CliError::Pipeline(e.to_string())),
        };
        lines.push(MetricLine::new("judge_accuracy", acc, js.len(), hash));
        lines.push(MetricLine::new("judge_f1", f1, js.len(), hash));
    }

    let out_dir = loaded.out_dir();
    create_dir(&out_dir)?;
    write_lines(&mut rec, out_dir.join("metrics.jsonl"), &lines)?;
    rec.finish(&out_dir)?;
    Ok(format!("{} metrics", lines.len()))
}
