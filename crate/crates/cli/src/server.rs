//! HTTP strength meter.
//!
//! Passwords only ever live in request memory: handlers log status, level
//! and latency, never the submitted text, and error bodies never echo it.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

use mope_core::bundle::load_offline;
use mope_core::corpus::RejectReason;
use mope_core::offline::{PasswordModel, Standalone};
use mope_core::psm::Meter;
use mope_core::{Execution, MopeError};

/// Which model a meter scores with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeterSource {
    Student,
    Mixture,
}

/// Builds a meter from an offline bundle, preferring its distilled student
/// unless `full` is set.
pub fn load_meter(
    dir: &Path,
    full: bool,
    pool_size: usize,
    seed: u64,
) -> mope_core::Result<(Meter, MeterSource)> {
    let bundle = load_offline(dir)?;
    let (model, source): (Box<dyn PasswordModel>, _) = match bundle.student {
        Some(s) if !full => (
            Box::new(Standalone::new(
                s,
                bundle.model.alphabet().clone(),
                bundle.model.max_len(),
            )?),
            MeterSource::Student,
        ),
        _ => (Box::new(bundle.model), MeterSource::Mixture),
    };
    let meter = Meter::new(model, pool_size, seed, Execution::default())?;
    Ok((meter, source))
}

#[derive(Debug, Deserialize)]
struct StrengthRequest {
    password: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

fn reject_message(reason: RejectReason, max_len: usize) -> String {
    match reason {
        RejectReason::Empty => "password must not be empty".into(),
        RejectReason::TooLong => format!("password must be at most {max_len} characters"),
        RejectReason::OutOfAlphabet => "password contains unsupported characters".into(),
        RejectReason::InvalidUtf8 | RejectReason::MissingField => "invalid password".into(),
    }
}

pub struct AppState {
    meter: Option<Meter>,
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn strength(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(meter) = state.meter.as_ref() else {
        log::warn!("strength query refused: model not loaded");
        return error(StatusCode::SERVICE_UNAVAILABLE, "model not loaded");
    };
    let Ok(req) = serde_json::from_slice::<StrengthRequest>(&body) else {
        log::info!("strength query rejected: malformed body");
        return error(
            StatusCode::BAD_REQUEST,
            "body must be a JSON object with a string field \"password\"",
        );
    };
    let model = meter.model();
    let max_len = model.max_len();
    let checked = model.alphabet().validate(&req.password).and_then(|()| {
        if req.password.chars().count() > max_len {
            Err(RejectReason::TooLong)
        } else {
            Ok(())
        }
    });
    if let Err(reason) = checked {
        log::info!("strength query rejected: {reason:?}");
        return error(StatusCode::BAD_REQUEST, reject_message(reason, max_len));
    }
    match meter.strength(&req.password) {
        Ok(v) => {
            log::info!(
                "strength query scored: level {:?}, {:.3} ms",
                v.level,
                v.latency_ms
            );
            Json(v).into_response()
        }
        Err(MopeError::ZeroProbability) => {
            log::info!("strength query rejected: zero probability");
            error(StatusCode::BAD_REQUEST, "password cannot be scored")
        }
        Err(_) => {
            log::error!("strength query failed inside the model");
            error(StatusCode::INTERNAL_SERVER_ERROR, "scoring failed")
        }
    }
}

/// The service router. `meter` is `None` when no model could be loaded, in
/// which case scoring answers 503.
pub fn router(meter: Option<Meter>, cors_origins: &[String]) -> anyhow::Result<Router> {
    let origins = cors_origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| anyhow::anyhow!("bad CORS origin {o:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let state = Arc::new(AppState { meter });
    Ok(Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/strength", post(strength))
        .layer(cors)
        .with_state(state))
}
