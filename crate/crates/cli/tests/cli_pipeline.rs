mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{build, engine, read_lines, Scale};
use polysource_cli::{Loaded, Manifest, Role};
use polysource_core::corpus::CorpusId;
use polysource_core::prompts::{
    render_context_prompt, render_exploration_prompt, render_judge_prompt, ContextDocument, KnowledgeBundle,
    PromptTask,
};
use polysource_core::query::QueryEngine;
use serde_json::{json, Value};

fn manifest(dir: &Path, sub: &str) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join(format!("manifest-{sub}.json"))).unwrap()).unwrap()
}

fn write_lines(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn ingest_and_index(f: &common::Fixture) {
    assert_eq!(engine(&f.config, "ingest", &[]), 0);
    assert_eq!(engine(&f.config, "index", &[]), 0);
}

#[test]
fn config_errors_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    assert_eq!(engine(&dir.path().join("absent.toml"), "ingest", &[]), 2);
    assert_eq!(engine(&f.config, "ingest", &["no_such_key=1"]), 2);
    assert_eq!(engine(&f.config, "ingest", &["tau=1.5"]), 2);
    // build-mqg-data needs n_q
    assert_eq!(engine(&f.config, "build-mqg-data", &[]), 2);
    assert_eq!(engine(&f.config, "eval", &[]), 2);
    assert!(!dir.path().join("stores").exists());
    assert!(!dir.path().join("out").exists());
    // usage errors
    assert_eq!(polysource_cli::run(["engine", "frobnicate"]), 2);
    assert_eq!(polysource_cli::run(["engine", "ingest"]), 2);
}

#[test]
fn pipeline_failure_exits_1_with_error_report() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    std::fs::write(dir.path().join("corpora/reports.jsonl"), "{not json\n").unwrap();
    assert_eq!(engine(&f.config, "ingest", &[]), 1);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/error-ingest.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "pipeline");
    assert_eq!(report["subcommand"], "ingest");
}

#[test]
fn ingest_index_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    ingest_and_index(&f);

    let m = manifest(&dir.path().join("stores"), "ingest");
    for c in CorpusId::UNSTRUCTURED {
        assert!(m.outputs.contains_key(&format!("stores/{c}.chunks.jsonl")), "{c}");
    }
    assert!(m.outputs.contains_key("stores/graph/graph_terms.jsonl"));
    assert!(m.outputs.contains_key("stores/reports.jsonl"));
    assert_eq!(m.inputs.len(), 7);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stores/ingest-report.json")).unwrap())
            .unwrap();
    let dups: BTreeMap<String, String> = serde_json::from_value(report["reports"]["duplicates"].clone()).unwrap();
    assert_eq!(dups, f.duplicates);
    assert_eq!(report["chunks"]["research"], 60);

    let idx = manifest(&dir.path().join("indices"), "index");
    assert!(idx.outputs.contains_key("indices/wiki.idx"));
    assert!(idx.outputs.contains_key("indices/reports.radiology.idx"));

    assert_eq!(engine(&f.config, "retrieve", &[]), 0);
    let out = dir.path().join("out");
    let traces = read_lines(&out.join("retrieval.jsonl"));
    assert_eq!(traces.len(), f.samples.len());
    for t in &traces {
        let sid = t["sample_id"].as_str().unwrap();
        assert_eq!(t["document_ids"][0], f.planted[sid].as_str(), "{sid}");
        assert_eq!(t["report_ids"][0], format!("r{}", &sid[1..]), "{sid}");
        assert!(out.join(format!("prompts/{sid}.txt")).exists());
    }
    assert!(read_lines(&out.join("retrieve-skipped.jsonl")).is_empty());
    let first = manifest(&out, "retrieve");
    assert!(first.outputs.contains_key("out/bundles.jsonl"));

    // warm cache, identical bytes
    assert_eq!(engine(&f.config, "retrieve", &[]), 0);
    assert_eq!(manifest(&out, "retrieve"), first);

    // any config change shows up in the manifest
    assert_eq!(engine(&f.config, "retrieve", &["top_n=12"]), 0);
    let changed = manifest(&out, "retrieve");
    assert_ne!(changed.config_hash, first.config_hash);
}

#[test]
fn unscripted_sample_is_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    ingest_and_index(&f);
    let mut samples = f.samples.clone();
    samples[0]["question"] = json!("a question nobody scripted");
    write_lines(&dir.path().join("samples.jsonl"), &samples);
    assert_eq!(engine(&f.config, "retrieve", &[]), 0);
    let skipped = read_lines(&dir.path().join("out/retrieve-skipped.jsonl"));
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0]["sample_id"], "s00");
    assert_eq!(read_lines(&dir.path().join("out/retrieval.jsonl")).len(), f.samples.len() - 1);
}

fn answer_for(i: usize, ctx: usize) -> &'static str {
    if (i * 3 + ctx * 5) % 7 < 4 {
        "A"
    } else {
        "B"
    }
}

fn task(s: &Value) -> PromptTask {
    serde_json::from_value(s["task"].clone()).unwrap()
}

#[test]
fn build_pairs_is_reproducible_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    let mut samples = f.samples.clone();
    let mut script = Vec::new();
    for (i, s) in samples.iter_mut().enumerate() {
        let k = KnowledgeBundle {
            reports: vec![format!("report text {i}")],
            documents: vec![ContextDocument { provenance: "research".into(), text: format!("document {i}") }],
        };
        s["knowledge"] = serde_json::to_value(&k).unwrap();
        let q = s["question"].as_str().unwrap();
        let img = s["image_ref"].as_str().unwrap();
        let variants = [k.clone(), k.without_reports(), k.without_documents(), KnowledgeBundle::default()];
        for (ctx, kb) in [(0, &variants[0]), (2, &variants[1]), (3, &variants[2]), (4, &variants[3])] {
            let prompt = render_context_prompt(q, kb, task(s));
            script.push(json!({ "prompt": prompt, "images": [img], "text": answer_for(i, ctx) }));
        }
    }
    // the irrelevant image is some other same-modality sample
    for (i, s) in samples.iter().enumerate() {
        let k: KnowledgeBundle = serde_json::from_value(s["knowledge"].clone()).unwrap();
        let prompt = render_context_prompt(s["question"].as_str().unwrap(), &k, task(s));
        for o in &samples {
            if o["sample_id"] != s["sample_id"] && o["modality"] == s["modality"] {
                script.push(json!({ "prompt": prompt, "images": [o["image_ref"]], "text": answer_for(i, 1) }));
            }
        }
    }
    write_lines(&dir.path().join("pairs-samples.jsonl"), &samples);
    write_lines(&dir.path().join("answerer.jsonl"), &script);
    let sets = ["samples=pairs-samples.jsonl", "answerer_url=mock://scripted?path=answerer.jsonl"];

    assert_eq!(engine(&f.config, "build-pairs", &sets), 0);
    let out = dir.path().join("out");
    let first = manifest(&out, "build-pairs");
    let outcomes = read_lines(&out.join("outcomes.jsonl"));
    assert_eq!(outcomes.len(), samples.len());
    for o in &outcomes {
        let i: usize = o["sample_id"].as_str().unwrap()[1..].parse().unwrap();
        for (ctx, name) in ["full", "irrelevant", "no_reports", "no_docs", "empty"].iter().enumerate() {
            assert_eq!(o[name], answer_for(i, ctx) == "A", "{i} {name}");
        }
    }
    assert_eq!(read_lines(&out.join("run-matrix.jsonl")).len(), samples.len());
    let n_pairs = read_lines(&out.join("d_cm.jsonl")).len() + read_lines(&out.join("d_mk.jsonl")).len();
    assert!(n_pairs > 0);

    // every answer now comes from the cache
    std::fs::write(dir.path().join("answerer.jsonl"), "").unwrap();
    assert_eq!(engine(&f.config, "build-pairs", &sets), 0);
    assert_eq!(manifest(&out, "build-pairs"), first);

    assert_eq!(engine(&f.config, "eval", &["eval_run_matrix=out/run-matrix.jsonl"]), 0);
    let metrics = read_lines(&out.join("metrics.jsonl"));
    let names: Vec<&str> = metrics.iter().map(|m| m["metric"].as_str().unwrap()).collect();
    assert_eq!(names, ["md", "kud", "kid"]);
    let full = outcomes.iter().filter(|o| o["full"] == true).count();
    let both = outcomes.iter().filter(|o| o["full"] == true && o["irrelevant"] == true).count();
    assert_eq!(metrics[0]["value"].as_f64().unwrap(), both as f64 / full as f64);
}

#[test]
fn build_pairs_reads_retrieved_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    ingest_and_index(&f);
    assert_eq!(engine(&f.config, "retrieve", &[]), 0);
    // an answerer with no script fails every call: all samples skipped
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    assert_eq!(engine(&f.config, "build-pairs", &["answerer_url=mock://scripted?path=empty.jsonl"]), 0);
    let out = dir.path().join("out");
    assert_eq!(read_lines(&out.join("pairs-skipped.jsonl")).len(), f.samples.len());
    let m = manifest(&out, "build-pairs");
    assert!(m.inputs.contains_key("out/bundles.jsonl"));
}

#[test]
fn explore_then_training_data() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    ingest_and_index(&f);

    let loaded = Loaded::from_file(&f.config, &[]).unwrap();
    let kb = polysource_cli::load_knowledge_base(&loaded, None).unwrap();
    let cache = loaded.cache().unwrap();
    let embed = loaded.gateway(Role::TextEmbed, &cache).unwrap();
    let rerank = loaded.gateway(Role::Rerank, &cache).unwrap();
    let qe = QueryEngine::new(&kb, &embed, &rerank, loaded.config.retrieval_params()).unwrap();

    let (mut expert, mut judge) = (Vec::new(), Vec::new());
    for (i, s) in f.samples.iter().enumerate() {
        let q = s["question"].as_str().unwrap();
        let img = s["image_ref"].as_str().unwrap();
        let corpus = CorpusId::UNSTRUCTURED[i % 4];
        let planted = common::planted_phrase(i);
        let text = format!("<{corpus}>{planted} ; zzqv nothing</{corpus}><graph>xyzzy , is a</graph>");
        expert.push(json!({ "prompt": render_exploration_prompt(q), "images": [img], "text": text }));
        for (query, verdict) in [(planted.as_str(), "yes"), ("zzqv nothing", "no")] {
            let docs: Vec<ContextDocument> = qe
                .retrieve_text(corpus, query)
                .unwrap()
                .unwrap()
                .into_iter()
                .map(|c| ContextDocument { provenance: c.corpus.to_string(), text: c.text })
                .collect();
            let prompt = render_judge_prompt(q, "A", &docs);
            judge.push(json!({ "prompt": prompt, "images": [img], "text": format!("<answer>{verdict}</answer>") }));
        }
    }
    write_lines(&dir.path().join("expert.jsonl"), &expert);
    write_lines(&dir.path().join("judge.jsonl"), &judge);
    let sets = [
        "expert_url=mock://scripted?path=expert.jsonl",
        "judge_url=mock://scripted?path=judge.jsonl",
        "n_q=1",
    ];
    assert_eq!(engine(&f.config, "explore", &sets), 0);
    let out = dir.path().join("out");
    let records = read_lines(&out.join("exploration.jsonl"));
    assert_eq!(records.len(), 3 * f.samples.len());
    for r in &records {
        let expected = match (r["corpus"].as_str().unwrap(), r["j"].as_u64().unwrap()) {
            ("graph", _) => "negative",
            (_, 1) => "positive",
            _ => "negative",
        };
        assert_eq!(r["label"], expected, "{r}");
    }

    assert_eq!(engine(&f.config, "build-mqg-data", &sets), 0);
    let sft = read_lines(&out.join("mqg-sft.jsonl"));
    let dpo = read_lines(&out.join("mqg-dpo.jsonl"));
    assert_eq!((sft.len(), dpo.len()), (f.samples.len(), f.samples.len()));
    let t = sft[0]["target_text"].as_str().unwrap();
    assert!(t.contains(&format!("<research>{}</research>", common::planted_phrase(0))), "{t}");
    let r = dpo[0]["rejected_text"].as_str().unwrap();
    assert!(r.contains("<research>zzqv nothing</research>") && r.contains("<graph>xyzzy , is a</graph>"), "{r}");
}
