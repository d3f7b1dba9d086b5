//! Synthetic desk fixture: four text corpora with planted answer phrases,
//! a term graph, report images with planted near-duplicates, samples and
//! a scripted query generator.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use polysource_core::corpus::{Chunk, CorpusId, Modality};
use polysource_core::prompts::render_query_generation_prompt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub struct Scale {
    pub docs_per_corpus: usize,
    pub terms: usize,
    pub base_images: usize,
    pub near_dups: usize,
    pub samples: usize,
}

impl Scale {
    /// 1000 chunks per text corpus, 1000 graph terms, 50 reports.
    pub const DESK: Scale = Scale { docs_per_corpus: 500, terms: 1000, base_images: 45, near_dups: 5, samples: 20 };
    pub const SMALL: Scale = Scale { docs_per_corpus: 30, terms: 40, base_images: 9, near_dups: 2, samples: 6 };
}

pub struct Fixture {
    pub root: PathBuf,
    pub config: PathBuf,
    /// sample id -> chunk id holding its planted phrase
    pub planted: BTreeMap<String, String>,
    /// near-duplicate report id -> the earlier report it copies
    pub duplicates: BTreeMap<String, String>,
    pub samples: Vec<serde_json::Value>,
}

pub const DOC_LEN: usize = 1800;

fn vocabulary(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(4..=9);
        let w: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn filler(rng: &mut ChaCha8Rng, vocab: &[String], chars: usize) -> String {
    let mut s = String::new();
    while s.len() < chars {
        s.push_str(&vocab[rng.random_range(0..vocab.len())]);
        s.push(' ');
    }
    s
}

pub fn planted_phrase(i: usize) -> String {
    format!("pl{i}x pl{i}y pl{i}z")
}

pub fn modality_of(k: usize) -> Modality {
    Modality::ALL[k % 3]
}

fn noise_image(rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(32, 32, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn task_for(i: usize, m: Modality) -> &'static str {
    match (i % 4, m) {
        (3, Modality::Radiology) => "report_rad",
        (3, Modality::Ophthalmology) => "report_oph",
        _ => "vqa",
    }
}

pub fn build(root: &Path, scale: &Scale) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let vocab = vocabulary(&mut rng, 5000);
    let corpora = root.join("corpora");
    std::fs::create_dir_all(corpora.join("images")).unwrap();

    let mut planted = BTreeMap::new();
    for (ci, corpus) in CorpusId::UNSTRUCTURED.into_iter().enumerate() {
        let mut docs = Vec::new();
        for d in 0..scale.docs_per_corpus {
            let doc_id = format!("d{d:04}");
            // sample i plants its phrase in corpus i % 4, document 10 + i
            let owner = (0..scale.samples).find(|&i| i % 4 == ci && 10 + i == d);
            let mut text = match owner {
                Some(i) => {
                    let mut t: String = filler(&mut rng, &vocab, 250).chars().take(250).collect();
                    t.push(' ');
                    for _ in 0..3 {
                        t.push_str(&planted_phrase(i));
                        t.push(' ');
                    }
                    planted.insert(format!("s{i:02}"), Chunk::make_id(corpus, &doc_id, 0));
                    t
                }
                None => String::new(),
            };
            text.push_str(&filler(&mut rng, &vocab, DOC_LEN));
            let text: String = text.chars().take(DOC_LEN).collect();
            docs.push(json!({ "doc_id": doc_id, "text": text }));
        }
        write_lines(&corpora.join(format!("{corpus}.jsonl")), &docs);
    }

    let relation_types = ["is a", "finding site", "associated with", "has morphology", "occurs in"];
    let terms: Vec<_> = (0..scale.terms)
        .map(|t| {
            json!({
                "term_id": format!("T{t:04}"),
                "surface": format!("term{t} {}", vocab[t % vocab.len()]),
                "definition": if t % 5 == 0 { String::new() } else { filler(&mut rng, &vocab, 60).trim().to_string() },
            })
        })
        .collect();
    let relations: Vec<_> = (0..scale.terms * 3)
        .map(|r| {
            json!({
                "head": format!("T{:04}", r % scale.terms),
                "relation_type": relation_types[r % relation_types.len()],
                "tail": format!("T{:04}", (r * 7 + 1) % scale.terms),
            })
        })
        .collect();
    write_lines(&corpora.join("graph_terms.jsonl"), &terms);
    write_lines(&corpora.join("graph_relations.jsonl"), &relations);

    let mut reports = Vec::new();
    let mut images = Vec::new();
    for k in 0..scale.base_images {
        let img = noise_image(&mut rng);
        let rel = format!("images/r{k:02}.png");
        img.save(corpora.join(&rel)).unwrap();
        images.push(img);
        reports.push(json!({
            "report_id": format!("r{k:02}"),
            "modality": modality_of(k),
            "image_path": rel,
            "report_text": format!("Findings: {}. Impression: case {k}.", filler(&mut rng, &vocab, 80).trim()),
        }));
    }
    let mut duplicates = BTreeMap::new();
    let stride = scale.base_images / scale.near_dups;
    for n in 0..scale.near_dups {
        let base = n * stride;
        let k = scale.base_images + n;
        let mut img = images[base].clone();
        let p = img.get_pixel_mut(16, 16);
        p.0[0] = if p.0[0] == 255 { 254 } else { p.0[0] + 1 };
        let rel = format!("images/r{k:02}.png");
        img.save(corpora.join(&rel)).unwrap();
        reports.push(json!({
            "report_id": format!("r{k:02}"),
            "modality": modality_of(base),
            "image_path": rel,
            "report_text": format!("Findings: copy of case {base}. Impression: unchanged."),
        }));
        duplicates.insert(format!("r{k:02}"), format!("r{base:02}"));
    }
    write_lines(&corpora.join("reports.jsonl"), &reports);

    let mut samples = Vec::new();
    let mut script = Vec::new();
    for i in 0..scale.samples {
        let m = modality_of(i);
        let question = format!("Case {i}: which option best describes the lesion? A. benign B. malignant");
        let image_ref = format!("corpora/images/r{i:02}.png");
        samples.push(json!({
            "sample_id": format!("s{i:02}"),
            "image_ref": image_ref,
            "question": question,
            "gold": "A",
            "modality": m,
            "task": task_for(i, m),
        }));
        let corpus = CorpusId::UNSTRUCTURED[i % 4];
        let mut text = format!("Queries:\n<{corpus}>{}</{corpus}>\n", planted_phrase(i));
        if i % 2 == 0 {
            let t = (i * 13) % scale.terms;
            text.push_str(&format!("<graph>term{t} {} , finding site</graph>\n", vocab[t % vocab.len()]));
        } else {
            text.push_str("<graph></graph>\n");
        }
        script.push(json!({
            "prompt": render_query_generation_prompt(&question),
            "images": [image_ref],
            "text": text,
        }));
    }
    write_lines(&root.join("samples.jsonl"), &samples);
    write_lines(&root.join("generator.jsonl"), &script);

    let config = root.join("engine.toml");
    std::fs::write(
        &config,
        r#"corpus_dir = "corpora"
store_dir = "stores"
index_dir = "indices"
out_dir = "out"
cache_dir = "cache"
samples = "samples.jsonl"
text_embed_url = "mock://hash?dims=512"
image_embed_url = "mock://hash?dims=64"
rerank_url = "mock://overlap"
query_generator_url = "mock://scripted?path=generator.jsonl"
workers = 4
"#,
    )
    .unwrap();

    Fixture { root: root.to_path_buf(), config, planted, duplicates, samples }
}

/// Runs the engine in-process.
pub fn engine(config: &Path, sub: &str, sets: &[&str]) -> u8 {
    let mut args = vec!["engine".to_string(), sub.to_string(), "--config".into(), config.display().to_string()];
    for s in sets {
        args.push("--set".into());
        args.push(s.to_string());
    }
    polysource_cli::run(args)
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
