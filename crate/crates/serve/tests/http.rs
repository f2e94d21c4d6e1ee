use std::collections::BTreeSet;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use lrmt::corpus::lang;
use lrmt::nmt::{Checkpoint, ModelConfig, Params};
use lrmt::SubwordModel;
use lrmt_serve::{router, AppState, ErrorResponse, HealthResponse, LanguagesResponse, Model, ServeConfig, TranslateResponse};
use serde_json::{json, Value};
use tower::ServiceExt;

const CODES: [&str; 5] = ["et", "fi", "sma", "sme", "vro"];

fn model() -> Model {
    let texts = ["kala on suur", "maja on väike", "kalat leat stuorrát", "talo on pieni"];
    let sw = SubwordModel::train(&texts, 300, 0).unwrap();
    let cfg = ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        token_vocab: sw.vocab_size(),
        factor_vocab: 5,
        factor_dim: 4,
        dropout: 0.0,
        label_smoothing: 0.1,
        max_len: 24,
    };
    let ckpt = Checkpoint::new(Params::init(&cfg, 5).unwrap(), CODES.iter().map(|c| lang(c)).collect()).unwrap();
    Model::new(ckpt, sw)
}

fn app_with(cfg: ServeConfig) -> Router {
    router(AppState::new(model(), cfg).unwrap())
}

fn app() -> Router {
    app_with(ServeConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), 1 << 20).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn translate(app: &Router, text: &str, tgt: &str) -> TranslateResponse {
    let (s, v) = call(app, "POST", "/translate", Some(json!({"text": text, "tgt_lang": tgt}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn error_code(v: Value) -> String {
    serde_json::from_value::<ErrorResponse>(v).unwrap().error.code
}

#[tokio::test]
async fn languages_and_health() {
    let app = app();
    let (s, v) = call(&app, "GET", "/languages", None).await;
    assert_eq!(s, StatusCode::OK);
    let l: LanguagesResponse = serde_json::from_value(v).unwrap();
    assert_eq!(l.languages, CODES);

    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: HealthResponse = serde_json::from_value(v).unwrap();
    assert_eq!(h.model, model().fingerprint);
    assert_eq!(h.status, "ok");
}

#[tokio::test]
async fn translate_is_deterministic_and_names_the_model() {
    let app = app();
    let a = translate(&app, "kala on suur", "fi").await;
    let b = translate(&app, "kala on suur", "fi").await;
    assert_eq!(a.translation, b.translation);
    assert_eq!(a.model, model().fingerprint);
    assert_eq!(a.tgt_lang, "fi");
    let m = model();
    let (direct, truncated) = m.translate("kala on suur", &lang("fi"), lrmt_serve::Mode::Greedy).unwrap();
    assert_eq!(a.translation, direct);
    assert_eq!(a.truncated, truncated);
}

#[tokio::test]
async fn error_codes() {
    let app = app_with(ServeConfig { max_chars: 20, ..ServeConfig::default() });
    let (s, v) = call(&app, "POST", "/translate", Some(json!({"text": "kala", "tgt_lang": "xx"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(v), "unknown_language");

    let (s, v) = call(&app, "POST", "/translate", Some(json!({"text": "   ", "tgt_lang": "et"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(v), "empty_text");

    let (s, v) = call(&app, "POST", "/translate", Some(json!({"text": "ä".repeat(21), "tgt_lang": "et"}))).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(error_code(v), "text_too_long");
    let (s, _) = call(&app, "POST", "/translate", Some(json!({"text": "ä".repeat(20), "tgt_lang": "et"}))).await;
    assert_eq!(s, StatusCode::OK);

    let (s, v) = call(&app, "POST", "/translate", Some(json!({"txt": "kala", "tgt_lang": "et"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(v), "invalid_request");
}

#[tokio::test]
async fn full_queue_gets_503() {
    let app = app_with(ServeConfig { workers: 1, queue: 0, ..ServeConfig::default() });
    let reqs: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, "POST", "/translate", Some(json!({"text": format!("kala on suur {i}"), "tgt_lang": "et", "mode": "beam"}))).await
            })
        })
        .collect();
    let mut codes = BTreeSet::new();
    for r in reqs {
        let (s, v) = r.await.unwrap();
        if s == StatusCode::SERVICE_UNAVAILABLE {
            assert_eq!(error_code(v), "overloaded");
        }
        codes.insert(s.as_u16());
    }
    assert!(codes.contains(&200));
    assert!(codes.iter().all(|c| *c == 200 || *c == 503));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_storm_matches_sequential() {
    let app = app();
    let texts: Vec<String> = (0..64).map(|i| format!("kala {} on suur", i % 7)).collect();
    let tgts = ["et", "fi", "vro", "sme"];
    let mut sequential = Vec::new();
    for (i, t) in texts.iter().enumerate() {
        sequential.push(translate(&app, t, tgts[i % 4]).await.translation);
    }
    let handles: Vec<_> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (app, t, tgt) = (app.clone(), t.clone(), tgts[i % 4]);
            tokio::spawn(async move { translate(&app, &t, tgt).await.translation })
        })
        .collect();
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(h.await.unwrap());
    }
    assert_eq!(concurrent, sequential);
}

#[tokio::test]
async fn long_text_is_stitched_from_sentences() {
    let app = app();
    let one = translate(&app, "kala on suur.", "fi").await.translation;
    let two = translate(&app, "maja on väike!", "fi").await.translation;
    let (s, v) = call(&app, "POST", "/translate_long", Some(json!({"text": "kala on suur. maja on väike!", "tgt_lang": "fi"}))).await;
    assert_eq!(s, StatusCode::OK);
    let long: TranslateResponse = serde_json::from_value(v).unwrap();
    assert_eq!(long.translation, format!("{one} {two}"));

    let (_, v) = call(&app, "POST", "/translate_long", Some(json!({"text": "kala on suur.", "tgt_lang": "fi"}))).await;
    assert_eq!(serde_json::from_value::<TranslateResponse>(v).unwrap().translation, one);

    let (_, v) = call(&app, "POST", "/translate_long", Some(json!({"text": "kala on suur.\n\n\nmaja on väike!", "tgt_lang": "fi"}))).await;
    assert_eq!(serde_json::from_value::<TranslateResponse>(v).unwrap().translation, format!("{one}\n\n\n{two}"));
}

#[tokio::test]
async fn replaying_the_request_log_reproduces_responses() {
    let dir = tempfile_dir();
    let log = dir.join("requests.jsonl");
    let logged = app_with(ServeConfig { request_log: Some(log.clone()), ..ServeConfig::default() });
    for (t, l) in [("kala on suur", "et"), ("talo on pieni", "sme"), ("maja", "xx")] {
        call(&logged, "POST", "/translate", Some(json!({"text": t, "tgt_lang": l}))).await;
    }
    let fresh = app();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for rec in lines {
        let (_, v) = call(&fresh, "POST", rec["endpoint"].as_str().unwrap(), Some(rec["request"].clone())).await;
        let mut got = v;
        let mut want = rec["response"].clone();
        for x in [&mut got, &mut want] {
            if let Some(o) = x.as_object_mut() {
                o.remove("latency_ms");
            }
        }
        assert_eq!(got, want);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("lrmt-serve-test-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let app = app();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/translate")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
