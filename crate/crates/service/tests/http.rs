use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use oddstop_service::{api, Store};
use serde_json::{json, Value};
use tower::ServiceExt;

const EXAMPLE: &str = r#"{"protocol":"P1","probs":[0.35,0.1,0.05,0.3,0.1,0.15,0.25]}"#;

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<&str>,
    headers: &[(&str, &str)],
) -> (StatusCode, Value) {
    let mut builder = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        builder = builder.header(*k, *v);
    }
    let request = builder
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn app() -> Router {
    api::router(Arc::new(Store::in_memory()), None)
}

async fn create(app: &Router, config: &str) -> String {
    let (status, body) = call(app, "POST", "/v1/sessions", Some(config), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

async fn post_outcome(
    app: &Router,
    id: &str,
    outcome: &str,
    key: Option<&str>,
) -> (StatusCode, Value) {
    let headers: Vec<(&str, &str)> = key.map(|k| ("Idempotency-Key", k)).into_iter().collect();
    call(
        app,
        "POST",
        &format!("/v1/sessions/{id}/outcomes"),
        Some(&json!({"outcome": outcome}).to_string()),
        &headers,
    )
    .await
}

#[tokio::test]
async fn health() {
    let (status, body) = call(&app(), "GET", "/healthz", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
}

#[tokio::test]
async fn example_session_stops_on_first_success_after_threshold() {
    let app = app();
    let id = create(&app, EXAMPLE).await;
    let (_, fresh) = call(&app, "GET", &format!("/v1/sessions/{id}"), None, &[]).await;
    assert_eq!(fresh["status"], "active");
    assert_eq!(fresh["recommendation"]["action"], "continue");
    assert_eq!(fresh["recommendation"]["figures"]["plan"]["index"], 4);
    assert_eq!(
        fresh["recommendation"]["figures"]["value_curve"]
            .as_array()
            .unwrap()
            .len(),
        7
    );

    for (i, o) in ["-", "-", "-"].iter().enumerate() {
        let (status, body) = post_outcome(&app, &id, o, Some(&format!("k{i}"))).await;
        assert_eq!(status, StatusCode::OK);
        let expected = if i == 2 { "armed" } else { "continue" };
        assert_eq!(body["recommendation"]["action"], expected);
    }
    let (_, body) = post_outcome(&app, &id, "+", Some("k3")).await;
    assert_eq!(body["recommendation"]["action"], "stop");
    assert_eq!(body["recommendation"]["source"], "odds-rule");
    assert_eq!(body["session"]["status"], "stopped");

    let (status, err) = post_outcome(&app, &id, "-", Some("k4")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"]["code"], "conflict");
    let (_, after) = call(&app, "GET", &format!("/v1/sessions/{id}"), None, &[]).await;
    assert_eq!(after["recommendation"]["action"], "stop");
    assert_eq!(after["completed"], 4);
}

#[tokio::test]
async fn idempotent_retry_does_not_double_count() {
    let app = app();
    let id = create(&app, EXAMPLE).await;
    let (_, first) = post_outcome(&app, &id, "-", Some("retry-me")).await;
    let (status, second) = post_outcome(&app, &id, "-", Some("retry-me")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["replayed"], true);
    assert_eq!(first["seq"], second["seq"]);
    assert_eq!(first["recommendation"], second["recommendation"]);
    assert_eq!(second["session"]["completed"], 1);
    let (status, _) = post_outcome(&app, &id, "+", Some("retry-me")).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn consent_flow() {
    let app = app();
    let id = create(&app, r#"{"protocol":"P2","h":[0.5,0.5,0.5,0.5,0.5,0.5]}"#).await;
    let (_, body) = post_outcome(&app, &id, "-", None).await;
    assert_eq!(body["recommendation"]["action"], "consent_required");
    assert_eq!(body["session"]["status"], "consent_required");
    let (status, _) = post_outcome(&app, &id, "-", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/consent"),
        Some(r#"{"granted":true}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["recommendation"]["action"], "continue");
    assert_eq!(body["recommendation"]["source"], "consent-policy");
    let (status, _) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/consent"),
        None,
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn inference_figures_exposed() {
    let app = app();
    let id = create(
        &app,
        r#"{"protocol":"P3","h":[0.9,0.8,0.7,0.6,0.5],"policy":{"alpha":0.05}}"#,
    )
    .await;
    let (_, body) = post_outcome(&app, &id, "+", None).await;
    let risk = &body["session"]["recommendation"]["figures"]["risk"];
    assert!(risk["expected_further"].as_f64().unwrap() > 0.0);
    assert!(risk["prob_no_further"].as_f64().is_some());
    assert_eq!(risk["alpha"], 0.05);
    let inference = &body["recommendation"]["figures"]["inference"];
    assert_eq!(inference["lines"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn schema_errors() {
    let app = app();
    let (status, body) = call(&app, "POST", "/v1/sessions", Some("{not json"), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "bad_request");

    let (status, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"protocol":"P1","probs":[0.2,"x"]}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "probs[1]");

    let (status, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"protocol":"P1","probs":[0.2,1.5]}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "probs[1]");

    let (status, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"protocol":"P9"}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "protocol");

    let id = create(&app, EXAMPLE).await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/outcomes"),
        Some(r#"{"outcome":"?"}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "outcome");
    let (status, body) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{id}/outcomes"),
        Some(r#"{"outcome":"+","h":0.4}"#),
        &[],
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "h");

    let (status, _) = call(&app, "GET", "/v1/sessions/missing", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/v2/anything", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn list_sessions() {
    let app = app();
    let a = create(&app, EXAMPLE).await;
    let b = create(
        &app,
        r#"{"protocol":"P4","horizon":10,"expected_requests":30}"#,
    )
    .await;
    let (status, body) = call(&app, "GET", "/v1/sessions", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids.len(), 2);
    assert!(ids.contains(&a.as_str()) && ids.contains(&b.as_str()));
}

#[tokio::test]
async fn bearer_token() {
    let app = api::router(Arc::new(Store::in_memory()), Some("s3cret".into()));
    let (status, _) = call(&app, "GET", "/v1/sessions", None, &[]).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(
        &app,
        "GET",
        "/v1/sessions",
        None,
        &[("Authorization", "Bearer nope")],
    )
    .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(
        &app,
        "GET",
        "/v1/sessions",
        None,
        &[("Authorization", "Bearer s3cret")],
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "GET", "/healthz", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn restart_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    let app = api::router(Arc::new(Store::open(dir.path()).unwrap()), None);
    let id = create(&app, EXAMPLE).await;
    post_outcome(&app, &id, "-", Some("a")).await;
    post_outcome(&app, &id, "+", Some("b")).await;
    let (_, before) = call(&app, "GET", &format!("/v1/sessions/{id}"), None, &[]).await;
    drop(app);

    let app = api::router(Arc::new(Store::open(dir.path()).unwrap()), None);
    let (_, after) = call(&app, "GET", &format!("/v1/sessions/{id}"), None, &[]).await;
    assert_eq!(before, after);
    let (_, retry) = post_outcome(&app, &id, "+", Some("b")).await;
    assert_eq!(retry["replayed"], true);
    assert_eq!(retry["session"]["completed"], 2);
}
