mod common;

use base64::Engine as _;
use common::{build, engine, Scale};
use polysource_cli::Loaded;
use serde_json::{json, Value};

struct Server {
    url: String,
    _rt: tokio::runtime::Runtime,
}

fn start(config: &std::path::Path) -> Server {
    let loaded = Loaded::from_file(config, &["max_concurrent_requests=2".into()]).unwrap();
    let app = polysource_cli::serve::router(&loaded).unwrap();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { url: format!("http://{addr}"), _rt: rt }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn post(s: &Server, body: &str) -> (u16, Value) {
    let mut resp = agent()
        .post(format!("{}/retrieve", s.url))
        .content_type("application/json")
        .send(body)
        .unwrap();
    (resp.status().as_u16(), resp.body_mut().read_json().unwrap())
}

#[test]
fn retrieve_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    assert_eq!(engine(&f.config, "ingest", &[]), 0);
    assert_eq!(engine(&f.config, "index", &[]), 0);
    let s = start(&f.config);

    let mut health = agent().get(format!("{}/healthz", s.url)).call().unwrap();
    assert_eq!(health.status().as_u16(), 200);
    assert_eq!(health.body_mut().read_json::<Value>().unwrap(), json!({ "status": "ok" }));

    let (code, body) = post(&s, &json!({ "question": "anything", "query_set": "" }).to_string());
    assert_eq!(code, 200);
    assert_eq!(body["documents"], json!([]));
    assert_eq!(body["reports"], json!([]));

    let qs = format!("<research>{}</research>", common::planted_phrase(0));
    let (code, body) = post(&s, &json!({ "question": "q", "query_set": qs }).to_string());
    assert_eq!(code, 200);
    assert_eq!(body["documents"][0]["id"], f.planted["s00"].as_str());
    assert_eq!(body["documents"][0]["corpus"], "research");

    // image only: self-retrieval from the report index
    let bytes = std::fs::read(dir.path().join("corpora/images/r03.png")).unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
    let req = json!({ "question": "q", "image_b64": b64, "modality": "radiology", "query_set": "" });
    let (code, body) = post(&s, &req.to_string());
    assert_eq!(code, 200);
    assert_eq!(body["reports"][0]["report_id"], "r03");
    assert!((body["reports"][0]["score"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    // no query_set: the scripted generator answers for sample 1
    let bytes = std::fs::read(dir.path().join("corpora/images/r01.png")).unwrap();
    let req = json!({
        "question": f.samples[1]["question"],
        "image_b64": base64::engine::general_purpose::STANDARD.encode(bytes),
        "modality": "ophthalmology",
    });
    let (code, body) = post(&s, &req.to_string());
    assert_eq!(code, 200, "{body}");
    assert_eq!(body["documents"][0]["id"], f.planted["s01"].as_str());
    assert_eq!(body["reports"][0]["report_id"], "r01");

    // graph facts get synthetic ids
    let (code, body) = post(&s, &json!({ "question": "q", "query_set": "<graph>term1 , is a</graph>" }).to_string());
    assert_eq!(code, 200);
    let ids: Vec<&str> = body["documents"].as_array().unwrap().iter().map(|d| d["id"].as_str().unwrap()).collect();
    assert!(ids.iter().all(|id| id.starts_with("graph:T0001#")), "{ids:?}");

    for bad in [
        "not json".to_string(),
        json!({ "question": "" , "query_set": "" }).to_string(),
        json!({ "question": "q", "image_b64": "***", "query_set": "" }).to_string(),
        json!({ "question": "q", "modality": "dermatology", "query_set": "" }).to_string(),
    ] {
        let (code, body) = post(&s, &bad);
        assert_eq!(code, 400, "{bad}");
        assert!(body["error"].is_string());
    }

    // an unscripted generator call is a server-side failure
    let (code, body) = post(&s, &json!({ "question": "nobody scripted this" }).to_string());
    assert_eq!(code, 500);
    assert_eq!(body["diagnostic_id"].as_str().unwrap().len(), 16);
}

#[test]
fn requires_generator_or_query_set() {
    let dir = tempfile::tempdir().unwrap();
    let f = build(dir.path(), &Scale::SMALL);
    assert_eq!(engine(&f.config, "ingest", &[]), 0);
    assert_eq!(engine(&f.config, "index", &[]), 0);
    let text = std::fs::read_to_string(&f.config).unwrap();
    let cfg = dir.path().join("nogen.toml");
    std::fs::write(&cfg, text.lines().filter(|l| !l.starts_with("query_generator_url")).collect::<Vec<_>>().join("\n"))
        .unwrap();
    let s = start(&cfg);
    let (code, body) = post(&s, &json!({ "question": "q" }).to_string());
    assert_eq!(code, 400);
    assert!(body["error"].as_str().unwrap().contains("query_set"));
}
