use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use qac_core::context::DocumentRecord;
use qac_core::dataset::{Origin, QueryDocPair};
use qac_core::engine::{CompleteOptions, Engine, ModelBundle, TrainConfig};
use qac_core::trie::WeightedQuery;
use qac_core::Source;
use qac_service::{router, AppState, CompleteResponse, DocumentSummary, Health, ServeConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn pair(q: &str, d: &str, c: f64) -> QueryDocPair {
    QueryDocPair { query: WeightedQuery::new(q, c).unwrap(), doc_id: d.into(), origin: Origin::Clicked }
}

fn train() -> Vec<QueryDocPair> {
    vec![
        pair("paris tourism", "paris", 5.0),
        pair("paris history", "paris", 3.0),
        pair("louvre museum hours", "paris", 2.0),
        pair("python lists", "python", 4.0),
        pair("python dictionaries", "python", 2.0),
        pair("parsing text", "python", 1.0),
    ]
}

fn paris() -> Value {
    json!({
        "doc_id": "paris",
        "url": "https://example.org/paris",
        "title": "Paris travel guide",
        "body": "Paris tourism peaks in summer. The louvre museum hours vary by season.",
        "queries": [
            {"text": "paris tourism", "clicks": 5.0},
            {"text": "paris history", "clicks": 3.0},
            {"text": "louvre museum hours", "clicks": 2.0}
        ]
    })
}

fn python() -> Value {
    json!({
        "doc_id": "python",
        "url": "https://example.org/python",
        "title": "Python tutorial",
        "body": "Python lists hold values. Python dictionaries map keys.",
        "queries": [{"text": "python lists", "clicks": 4.0}]
    })
}

fn empty_engine() -> Engine {
    let docs: Vec<DocumentRecord> = [paris(), python()].into_iter().map(|v| serde_json::from_value(v).unwrap()).collect();
    let models = ModelBundle::train(&train(), &docs, &TrainConfig { vocab_size: 120, ..Default::default() }).unwrap();
    Engine::new(models)
}

fn app(engine: Engine) -> Router {
    router(AppState::new(engine), &ServeConfig::default())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, body, headers)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(uri: &str, body: &Value) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

#[tokio::test]
async fn health_on_empty_corpus() {
    let app = app(empty_engine());
    let (status, body, _) = call(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_value(body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.documents, 0);
}

#[tokio::test]
async fn ingestion_lists_and_replaces() {
    let app = app(empty_engine());
    for doc in [paris(), python()] {
        let (status, body, _) = call(&app, post("/v1/documents", &doc)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["stats"]["replaced"], false);
    }
    let (_, body, _) = call(&app, get("/v1/documents")).await;
    let list: Vec<DocumentSummary> = serde_json::from_value(body).unwrap();
    assert_eq!(list.len(), 2);
    let p = list.iter().find(|d| d.doc_id == "paris").unwrap();
    assert_eq!(p.queries, 3);

    let (status, body, _) = call(&app, post("/v1/documents", &paris())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["stats"]["replaced"], true);
    let (_, body, _) = call(&app, get("/v1/health")).await;
    assert_eq!(body["documents"], 2);
}

#[tokio::test]
async fn malformed_ingestion_is_rejected() {
    let app = app(empty_engine());
    let (status, body, _) = call(&app, post("/v1/documents", &json!({"doc_id": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_input");
    let mut bad = paris();
    bad["doc_id"] = json!("");
    let (status, body, _) = call(&app, post("/v1/documents", &bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("doc_id"), "{body}");
}

#[tokio::test]
async fn mpc_matches_library() {
    let engine = empty_engine();
    let (engine, _) = engine.with_document(serde_json::from_value(paris()).unwrap()).unwrap();
    let app = app(engine.clone());
    let (status, body, _) = call(&app, get("/v1/complete?doc_id=paris&prefix=par&mode=mpc&trie=docq")).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: CompleteResponse = serde_json::from_value(body).unwrap();
    assert_eq!(resp.mode, Source::Mpc);
    let texts: Vec<&str> = resp.suggestions.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(texts, ["paris tourism", "paris history"]);

    let opts = CompleteOptions { mode: Source::Mpc, trie: qac_core::engine::TrieScope::DocQ, ..Default::default() };
    let lib = engine.complete(Some("paris"), "par", &opts).unwrap();
    assert_eq!(resp.suggestions, lib);
}

#[tokio::test]
async fn zero_bias_guided_equals_lm() {
    let (engine, _) = empty_engine().with_document(serde_json::from_value(paris()).unwrap()).unwrap();
    let app = app(engine);
    let (s1, guided, _) = call(&app, get("/v1/complete?doc_id=paris&prefix=pa&mode=guided&bias=0&k=5")).await;
    let (s2, lm, _) = call(&app, get("/v1/complete?doc_id=paris&prefix=pa&mode=lm&k=5")).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    let g: CompleteResponse = serde_json::from_value(guided).unwrap();
    let l: CompleteResponse = serde_json::from_value(lm).unwrap();
    assert!(!l.suggestions.is_empty());
    let gt: Vec<_> = g.suggestions.iter().map(|s| (&s.text, s.score)).collect();
    let lt: Vec<_> = l.suggestions.iter().map(|s| (&s.text, s.score)).collect();
    assert_eq!(gt, lt);
}

#[tokio::test]
async fn bad_parameters_are_400() {
    let app = app(empty_engine());
    for uri in [
        "/v1/complete?prefix=pa&k=0",
        "/v1/complete?prefix=pa&k=ten",
        "/v1/complete?prefix=pa&mode=magic",
        "/v1/complete?prefix=pa&lambda=2",
        "/v1/complete?prefix=pa&alpha=NaN",
        "/v1/complete?prefix=pa&context=P_TUS",
        "/v1/complete?k=3",
    ] {
        let (status, body, _) = call(&app, get(uri)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}: {body}");
        assert!(body["error"]["message"].is_string());
    }
}

#[tokio::test]
async fn unknown_document_is_404() {
    let app = app(empty_engine());
    let (status, body, _) = call(&app, get("/v1/complete?doc_id=nope&prefix=pa")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, _, _) = call(&app, get("/v1/missing")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn dense_context_without_vectors_is_503() {
    let (engine, _) = empty_engine().with_document(serde_json::from_value(paris()).unwrap()).unwrap();
    let app = app(engine);
    let (status, body, _) = call(&app, get("/v1/complete?doc_id=paris&prefix=pa&mode=lm&context=DENSE_RAG")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
}

#[tokio::test]
async fn cors_headers() {
    let app = app(empty_engine());
    let req = Request::get("/v1/health").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let (_, _, headers) = call(&app, req).await;
    assert_eq!(headers.get("access-control-allow-origin").unwrap(), "*");

    let restricted = router(
        AppState::new(empty_engine()),
        &ServeConfig { cors_origin: Some("http://ui.example".into()), ..Default::default() },
    );
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/v1/complete")
        .header("origin", "http://ui.example")
        .header("access-control-request-method", "GET")
        .body(Body::empty())
        .unwrap();
    let (status, _, headers) = call(&restricted, req).await;
    assert!(status.is_success());
    assert_eq!(headers.get("access-control-allow-origin").unwrap(), "http://ui.example");
}

#[tokio::test]
async fn serves_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>qac</h1>").unwrap();
    let app = router(
        AppState::new(empty_engine()),
        &ServeConfig { static_dir: Some(dir.path().to_path_buf()), ..Default::default() },
    );
    let resp = app.clone().oneshot(get("/index.html")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<h1>qac</h1>");
    let (status, _, _) = call(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn readers_see_whole_epochs_during_ingestion() {
    let app = app(empty_engine());
    call(&app, post("/v1/documents", &paris())).await;
    let writer = {
        let app = app.clone();
        tokio::spawn(async move {
            for i in 0..10 {
                let mut doc = python();
                doc["doc_id"] = json!(format!("python{i}"));
                let (status, _, _) = call(&app, post("/v1/documents", &doc)).await;
                assert_eq!(status, StatusCode::OK);
            }
        })
    };
    let mut last = 1;
    while !writer.is_finished() {
        let (_, body, _) = call(&app, get("/v1/documents")).await;
        let list: Vec<DocumentSummary> = serde_json::from_value(body).unwrap();
        assert!(list.len() >= last && list.len() <= 11);
        assert!(list.iter().any(|d| d.doc_id == "paris" && d.queries == 3));
        last = list.len();
        let (status, body, _) = call(&app, get("/v1/complete?doc_id=paris&prefix=par&mode=mpc&trie=docq")).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["suggestions"].as_array().unwrap().len(), 2);
    }
    writer.await.unwrap();
    let (_, body, _) = call(&app, get("/v1/health")).await;
    assert_eq!(body["documents"], 11);
}
