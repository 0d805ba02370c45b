use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pbo_core::bench::make_grid;
use pbo_core::harness::initial_duel_indices;
use pbo_core::Domain;
use pbo_service::{router, SessionStore};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(SessionStore::in_memory()), None)
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn create(app: &Router, spec: Value) -> String {
    let (status, body) = send(app, "POST", "/sessions", Some(spec)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

fn unit_interval(policy: &str) -> Value {
    json!({"domain": {"bounds": [[0.0, 1.0]]}, "policy": policy, "config": {"grid_per_dim": 11}})
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["code"], code, "{body}");
    assert!(!body["message"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn created_session_is_fetchable() {
    let app = app();
    let id = create(&app, unit_interval("dts")).await;
    let (status, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["id"], id.as_str());
    assert_eq!(state["policy"], "dts");
    assert_eq!(state["size"], 0);
    assert_eq!(state["pending"], Value::Null);
    assert_eq!(state["config"]["n_init"], 5);

    let (_, list) = send(&app, "GET", "/sessions", None).await;
    assert_eq!(list["ids"], json!([id]));
}

#[tokio::test]
async fn creations_get_distinct_ids() {
    let app = app();
    let a = create(&app, unit_interval("pe")).await;
    let b = create(&app, unit_interval("pe")).await;
    assert_ne!(a, b);
}

#[tokio::test]
async fn invalid_creations_are_rejected() {
    let app = app();
    let cases = [
        (
            json!({"domain": {"bounds": [[0, 1], [0, 1]]}, "policy": "cei", "config": {"grid_per_dim": 5}}),
            StatusCode::UNPROCESSABLE_ENTITY,
            "unsupported",
        ),
        (json!({"domain": {"bounds": [[0, 1]]}, "policy": "sparring"}), StatusCode::UNPROCESSABLE_ENTITY, "unsupported"),
        (json!({"policy": "dts"}), StatusCode::BAD_REQUEST, "invalid_request"),
        (json!({"domain": {"bounds": [[1, 0]]}, "policy": "dts"}), StatusCode::BAD_REQUEST, "invalid_request"),
        (json!({"domain": {"bounds": []}, "policy": "dts"}), StatusCode::BAD_REQUEST, "invalid_request"),
        (json!({"domain": {"bounds": [[0, 1]]}, "policy": "greedy"}), StatusCode::BAD_REQUEST, "invalid_request"),
        (
            json!({"domain": {"bounds": [[0, 1]]}, "policy": "dts", "config": {"n_init": 0}}),
            StatusCode::BAD_REQUEST,
            "invalid_request",
        ),
        (
            json!({"domain": {"bounds": [[0, 1], [0, 1], [0, 1]]}, "policy": "dts"}),
            StatusCode::BAD_REQUEST,
            "invalid_request",
        ),
        (
            json!({"domain": {"bounds": [[0, 2]]}, "policy": "dts", "simulated": "forrester"}),
            StatusCode::BAD_REQUEST,
            "invalid_request",
        ),
    ];
    for (spec, status, code) in cases {
        let (s, body) = send(&app, "POST", "/sessions", Some(spec.clone())).await;
        assert_eq!(s, status, "{spec} -> {body}");
        assert_error(&body, code);
    }

    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_error(&body, "invalid_request");
}

#[tokio::test]
async fn unknown_sessions_and_routes_are_json_404s() {
    let app = app();
    for (method, uri) in [
        ("GET", "/sessions/nope"),
        ("GET", "/sessions/nope/next-duel"),
        ("GET", "/sessions/nope/winner"),
    ] {
        let (status, body) = send(&app, method, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_error(&body, "session_not_found");
    }
    let (status, body) = send(&app, "POST", "/sessions/nope/outcome", Some(json!({"y": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "session_not_found");
    let (status, body) = send(&app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
}

#[tokio::test]
async fn opening_duels_come_from_the_initial_stream() {
    let app = app();
    let id = create(&app, json!({"domain": {"bounds": [[0, 1]]}, "policy": "dts", "config": {"grid_per_dim": 11, "seed": 7}})).await;
    let grid = make_grid(&Domain::new(vec![(0.0, 1.0)], Some(11)).unwrap()).unwrap();
    let expected = initial_duel_indices(5, grid.len(), 7).unwrap();
    for (k, &(l, r)) in expected.iter().enumerate() {
        let (_, duel) = send(&app, "GET", &format!("/sessions/{id}/next-duel"), None).await;
        assert_eq!(duel["iteration"], k + 1);
        assert_eq!(duel["bootstrap"], true);
        assert_eq!((duel["left_index"].as_u64().unwrap() as usize, duel["right_index"].as_u64().unwrap() as usize), (l, r));
        assert_eq!(duel["left"], json!(grid[l]));
        assert_eq!(duel["right"], json!(grid[r]));
        send(&app, "POST", &format!("/sessions/{id}/outcome"), Some(json!({"y": k % 2}))).await;
    }
    let (_, duel) = send(&app, "GET", &format!("/sessions/{id}/next-duel"), None).await;
    assert_eq!(duel["bootstrap"], false);
    assert_eq!(duel["iteration"], 6);
}

#[tokio::test]
async fn next_duel_is_idempotent() {
    let app = app();
    let id = create(&app, unit_interval("pe")).await;
    let uri = format!("/sessions/{id}/next-duel");
    let (s1, a) = send(&app, "GET", &uri, None).await;
    let (s2, b) = send(&app, "GET", &uri, None).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    let (_, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["pending"], a);
}

#[tokio::test]
async fn outcomes_are_recorded_exactly_once() {
    let app = app();
    let id = create(&app, unit_interval("random")).await;
    let outcome = format!("/sessions/{id}/outcome");

    let (status, body) = send(&app, "POST", &outcome, Some(json!({"y": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "no_pending_duel");

    send(&app, "GET", &format!("/sessions/{id}/next-duel"), None).await;
    let (status, body) = send(&app, "POST", &outcome, Some(json!({"y": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_request");
    let (status, body) = send(&app, "POST", &outcome, Some(json!({"y": "left"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_request");

    let (status, body) = send(&app, "POST", &outcome, Some(json!({"y": 1}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["size"], 1);
    let (status, body) = send(&app, "POST", &outcome, Some(json!({"y": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "no_pending_duel");

    let (_, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["size"], 1);
    assert_eq!(state["history"].as_array().unwrap().len(), 1);
    assert_eq!(state["history"][0]["y"], 1);
    assert_eq!(state["seq"], 2);
}

#[tokio::test]
async fn concurrent_answers_to_one_duel_record_one_outcome() {
    let app = app();
    let id = create(&app, unit_interval("random")).await;
    send(&app, "GET", &format!("/sessions/{id}/next-duel"), None).await;
    let uri = format!("/sessions/{id}/outcome");
    let results = futures_join(&app, &uri, 8).await;
    assert_eq!(results.iter().filter(|s| **s == StatusCode::OK).count(), 1);
    assert_eq!(results.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 7);
    let (_, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["size"], 1);
}

async fn futures_join(app: &Router, uri: &str, n: usize) -> Vec<StatusCode> {
    let handles: Vec<_> = (0..n)
        .map(|_| {
            let app = app.clone();
            let uri = uri.to_string();
            tokio::spawn(async move { send(&app, "POST", &uri, Some(json!({"y": 0}))).await.0 })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test]
async fn winner_needs_data_and_reports_the_table_maximum() {
    let app = app();
    let id = create(&app, unit_interval("dts")).await;
    let (status, body) = send(&app, "GET", &format!("/sessions/{id}/winner"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "no_data");

    for k in 0..5 {
        send(&app, "GET", &format!("/sessions/{id}/next-duel"), None).await;
        send(&app, "POST", &format!("/sessions/{id}/outcome"), Some(json!({"y": k % 2}))).await;
    }
    let (status, w) = send(&app, "GET", &format!("/sessions/{id}/winner"), None).await;
    assert_eq!(status, StatusCode::OK);
    let table = w["table"].as_array().unwrap();
    assert_eq!(table.len(), 11);
    let scores: Vec<f64> = table.iter().map(|e| e["score"].as_f64().unwrap()).collect();
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let best = scores.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(w["score"].as_f64().unwrap(), best);
    let index = w["index"].as_u64().unwrap() as usize;
    assert_eq!(scores[index], best);
    assert_eq!(w["point"], table[index]["point"]);
    assert_eq!(w["size"], 5);
    assert_eq!(w["model"]["lengthscales"].as_array().unwrap().len(), 1);
    // Five duels leave the model unsure: no candidate is a clear winner.
    assert!(scores.iter().all(|s| (s - 0.5).abs() < 0.45), "{scores:?}");
}

#[tokio::test]
async fn simulated_sessions_answer_themselves() {
    let app = app();
    let id = create(&app, json!({"policy": "dts", "simulated": "forrester", "config": {"grid_per_dim": 17}})).await;
    let (status, body) = send(&app, "POST", &format!("/sessions/{id}/simulate"), Some(json!({"steps": 8}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["size"], 8);
    let (_, state) = send(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state["domain"]["bounds"], json!([[0.0, 1.0]]));
    assert!(state["history"].as_array().unwrap().iter().all(|h| h["simulated"] == true));

    let (status, body) = send(&app, "POST", &format!("/sessions/{id}/simulate"), Some(json!({"steps": 100_000}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error(&body, "invalid_request");

    let human = create(&app, unit_interval("dts")).await;
    let (status, body) = send(&app, "POST", &format!("/sessions/{human}/simulate"), Some(json!({"steps": 1}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error(&body, "not_simulated");
}

#[tokio::test]
async fn ui_assets_are_served_under_ui() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>duel</title>").unwrap();
    std::fs::create_dir(dir.path().join("assets")).unwrap();
    std::fs::write(dir.path().join("assets/app.js"), "console.log(1)").unwrap();
    let app = router(Arc::new(SessionStore::in_memory()), Some(dir.path().to_path_buf()));

    let (status, body) = send(&app, "GET", "/ui/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("<!doctype html><title>duel</title>".into()));
    let (status, body) = send(&app, "GET", "/ui/assets/app.js", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, Value::String("console.log(1)".into()));
    let (status, _) = send(&app, "GET", "/ui/missing.js", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = send(&self::app(), "GET", "/ui/", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
}
