use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use protofix::pemb::write_embeddings;
use protofix::service::{router, AppState, ServiceSettings};
use protofix_core::{generate_synthetic, SyntheticConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn dataset(dir: &Path, sigma: f64) -> String {
    let cfg = SyntheticConfig {
        classes: 6,
        dim: 16,
        per_class_train: 30,
        per_class_test: 40,
        sigma,
        seed: 3,
        ..Default::default()
    };
    let base = dir.join("synth");
    write_embeddings(&generate_synthetic(&cfg).unwrap(), &base).unwrap();
    base.to_string_lossy().into_owned()
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn open(state: &Arc<AppState>, base: &str, budget: Value) -> Value {
    let (status, body) = call(
        state,
        "POST",
        "/session",
        Some(json!({ "train_path": base, "test_path": base, "k": 2, "budget": budget })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

async fn first_misclassified(state: &Arc<AppState>) -> Value {
    let (status, page) = call(state, "GET", "/items?only=misclassified&page_size=5", None).await;
    assert_eq!(status, StatusCode::OK);
    page["items"][0].clone()
}

#[tokio::test]
async fn everything_needs_a_session() {
    let state = AppState::new(ServiceSettings::default());
    for (m, uri) in [("GET", "/items"), ("GET", "/metrics"), ("POST", "/store/reset"), ("GET", "/store/export")] {
        let (status, body) = call(&state, m, uri, None).await;
        assert_eq!(status, StatusCode::CONFLICT, "{uri}");
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn bad_session_paths_are_client_errors() {
    let state = AppState::new(ServiceSettings::default());
    let (status, body) = call(
        &state,
        "POST",
        "/session",
        Some(json!({ "train_path": "/nonexistent/x", "test_path": "/nonexistent/x" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("nonexistent"));
}

#[tokio::test]
async fn correction_fixes_the_item_and_reset_restores_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings { reveal_labels: true, ..Default::default() });
    let info = open(&state, &base, Value::Null).await;
    assert_eq!(info["class_list"].as_array().unwrap().len(), 6);

    let (_, initial) = call(&state, "GET", "/metrics", None).await;
    assert_eq!(initial["acc_base"], info["acc_base"]);
    assert_eq!(initial["acc_C_live"], 100.0);
    assert_eq!(initial["acc_E_live"], 0.0);
    assert_eq!(initial["forgetting_live"], 0.0);

    let item = first_misclassified(&state).await;
    let id = item["id"].as_str().unwrap().to_string();
    let truth = item["label"]["name"].as_str().unwrap().to_string();
    assert_ne!(item["prediction"]["name"], item["label"]["name"]);

    let (status, outcome) = call(&state, "POST", "/corrections", Some(json!({ "item_id": id, "label": truth }))).await;
    assert_eq!(status, StatusCode::OK, "{outcome}");
    assert_eq!(outcome["prediction_after"]["class"]["name"], truth);
    assert_eq!(outcome["prediction_after"]["distance"], 0.0);

    let (_, pred) = call(&state, "POST", "/predict", Some(json!({ "item_id": id }))).await;
    assert_eq!(pred["class"]["name"], truth);

    let (_, page) = call(&state, "GET", "/items?only=all&page_size=1000", None).await;
    let card = page["items"].as_array().unwrap().iter().find(|c| c["id"] == id.as_str()).unwrap().clone();
    assert_eq!(card["prediction"]["name"], truth);

    let (_, after) = call(&state, "GET", "/metrics", None).await;
    assert!(after["acc_E_live"].as_f64().unwrap() > 0.0);
    assert_eq!(after["corrections"], 1);
    assert_eq!(after["store_stats"]["user"], 1);

    let (status, _) = call(&state, "POST", "/store/reset", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, reset) = call(&state, "GET", "/metrics", None).await;
    assert_eq!(reset, initial);
}

#[tokio::test]
async fn labels_hidden_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings::default());
    open(&state, &base, Value::Null).await;
    let (_, page) = call(&state, "GET", "/items?page=1&page_size=7", None).await;
    assert_eq!(page["items"].as_array().unwrap().len(), 7);
    assert_eq!(page["total"], 240);
    let card = &page["items"][0];
    assert_eq!(card["label_hidden"], true);
    assert!(card.get("label").is_none());
    let ids: Vec<&str> = page["items"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[tokio::test]
async fn export_then_import_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings { reveal_labels: true, ..Default::default() });
    open(&state, &base, json!(40)).await;
    let item = first_misclassified(&state).await;
    call(&state, "POST", "/corrections", Some(json!({ "item_id": item["id"], "label": item["label"]["id"] }))).await;
    let (_, exported) = call(&state, "GET", "/store/export", None).await;
    let (_, metrics) = call(&state, "GET", "/metrics", None).await;

    call(&state, "POST", "/store/reset", None).await;
    let (status, _) = call(&state, "POST", "/store/import", Some(exported.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, again) = call(&state, "GET", "/store/export", None).await;
    assert_eq!(again, exported);
    let (_, reimported) = call(&state, "GET", "/metrics", None).await;
    assert_eq!(reimported["acc_E_live"], metrics["acc_E_live"]);
    assert_eq!(reimported["store_stats"], metrics["store_stats"]);
    assert_eq!(reimported["store_stats"]["budget"], 40);

    let mut wrong_dim = exported.clone();
    wrong_dim["dim"] = json!(3);
    let (status, _) = call(&state, "POST", "/store/import", Some(wrong_dim)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&state, "POST", "/store/import", Some(json!({ "nope": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings::default());
    open(&state, &base, Value::Null).await;

    let (status, _) = call(&state, "POST", "/predict", Some(json!({ "item_id": "missing" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&state, "POST", "/predict", Some(json!({ "embedding": [1.0, 2.0] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&state, "POST", "/predict", Some(json!({ "embedding": vec![0.0; 16] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, p) = call(&state, "POST", "/predict", Some(json!({ "embedding": vec![0.25; 16] }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(p["alternatives"].as_array().unwrap().len(), 5);

    let item = first_misclassified(&state).await;
    let (status, _) = call(&state, "POST", "/corrections", Some(json!({ "item_id": item["id"], "label": "zebra" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&state, "POST", "/corrections", Some(json!({ "item_id": "missing", "label": 0 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, m) = call(&state, "GET", "/metrics", None).await;
    assert_eq!(m["corrections"], 0);
}

#[tokio::test]
async fn open_class_mode_registers_new_labels() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings { open_class: true, ..Default::default() });
    open(&state, &base, Value::Null).await;
    let item = first_misclassified(&state).await;
    let (status, out) = call(&state, "POST", "/corrections", Some(json!({ "item_id": item["id"], "label": "zebra" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["prediction_after"]["class"]["id"], 6);
    let (_, info) = call(&state, "GET", "/session", None).await;
    assert_eq!(info["class_list"].as_array().unwrap().len(), 7);
}

#[tokio::test]
async fn serves_ui_bundle_under_root() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    let state = AppState::new(ServiceSettings { ui_dir: Some(ui.path().to_path_buf()), ..Default::default() });
    let (status, body) = call(&state, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.as_str().unwrap().contains("<title>ui</title>"));
    let (status, _) = call(&state, "GET", "/metrics", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_reads_see_whole_corrections() {
    let dir = tempfile::tempdir().unwrap();
    let base = dataset(dir.path(), 0.45);
    let state = AppState::new(ServiceSettings { reveal_labels: true, ..Default::default() });
    open(&state, &base, Value::Null).await;
    let (_, page) = call(&state, "GET", "/items?only=misclassified&page_size=20", None).await;
    let items = page["items"].as_array().unwrap().clone();

    let writer = {
        let state = state.clone();
        tokio::spawn(async move {
            for item in items {
                call(&state, "POST", "/corrections", Some(json!({ "item_id": item["id"], "label": item["label"]["id"] }))).await;
            }
        })
    };
    for _ in 0..50 {
        let (_, m) = call(&state, "GET", "/metrics", None).await;
        assert_eq!(m["store_stats"]["user"], m["corrections"]);
        assert_eq!(m["store_stats"]["total"], m["store_stats"]["server"].as_u64().unwrap() + m["store_stats"]["user"].as_u64().unwrap());
    }
    writer.await.unwrap();
}
