mod support;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use mope_cli::server::{load_meter, router, MeterSource};

const ORIGIN: &str = "http://localhost:8080";

fn app(with_model: bool) -> Router {
    let meter = with_model.then(|| {
        let dir = tempfile::tempdir().unwrap();
        support::train_bundle(dir.path(), false);
        load_meter(dir.path(), false, 2000, 1).unwrap().0
    });
    router(meter, &[ORIGIN.to_string()]).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, body)
}

fn post(body: &str) -> Request<Body> {
    Request::post("/v1/strength")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn score(pw: &str) -> Request<Body> {
    post(&serde_json::json!({ "password": pw }).to_string())
}

#[tokio::test]
async fn health_and_scoring() {
    let app = app(true);
    let (s, body) = send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, serde_json::json!({"status": "ok"}));

    let (s, common) = send(&app, score("love")).await;
    assert_eq!(s, StatusCode::OK);
    let obj = common.as_object().unwrap();
    assert_eq!(obj.len(), 3);
    assert!(obj["latency_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(obj["level"], "weak");

    let (s, rare) = send(&app, score("xQ7#pL2v9!Zr~k")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(
        rare["log10_guess_number"].as_f64().unwrap()
            > common["log10_guess_number"].as_f64().unwrap()
    );
    assert!(["weak", "medium", "strong"].contains(&rare["level"].as_str().unwrap()));
}

#[tokio::test]
async fn invalid_input_is_400_without_echo() {
    let app = app(true);
    let secret = "hunter2hunter2hunter2";
    let cases = [
        "not json".to_string(),
        "{}".to_string(),
        r#"{"password": 12}"#.to_string(),
        r#"{"password": ""}"#.to_string(),
        serde_json::json!({ "password": secret }).to_string(),
        serde_json::json!({ "password": "pässwörd" }).to_string(),
        format!("{{\"password\": \"{secret}\""),
    ];
    for c in &cases {
        let (s, body) = send(&app, post(c)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{c}");
        let msg = body["error"].as_str().unwrap();
        assert!(!msg.contains(secret) && !msg.contains("pässwörd"), "{msg}");
    }
    let (s, _) = send(
        &app,
        Request::get("/v1/strength").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn missing_model_is_503() {
    let app = app(false);
    let (s, body) = send(&app, score("love")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "model not loaded");
    let (s, _) = send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn cors_follows_the_allowlist() {
    let app = app(false);
    for (origin, allowed) in [(ORIGIN, true), ("http://evil.example", false)] {
        let req = Request::builder()
            .method(Method::OPTIONS)
            .uri("/v1/strength")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
            .body(Body::empty())
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let got = resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN);
        if allowed {
            assert_eq!(got.unwrap(), origin);
        } else {
            assert!(got.is_none());
        }
    }
    assert!(router(None, &["bad\norigin".to_string()]).is_err());
}

#[test]
fn meter_prefers_the_student() {
    let plain = tempfile::tempdir().unwrap();
    support::train_bundle(plain.path(), false);
    let with = tempfile::tempdir().unwrap();
    support::train_bundle(with.path(), true);
    assert_eq!(
        load_meter(plain.path(), false, 500, 1).unwrap().1,
        MeterSource::Mixture
    );
    assert_eq!(
        load_meter(with.path(), false, 500, 1).unwrap().1,
        MeterSource::Student
    );
    assert_eq!(
        load_meter(with.path(), true, 500, 1).unwrap().1,
        MeterSource::Mixture
    );
    assert!(load_meter(&with.path().join("missing"), false, 500, 1).is_err());
}
