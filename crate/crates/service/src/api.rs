//! `/v1` JSON API over a [`Store`].
//!
//! | method | path                          | body               |
//! |--------|-------------------------------|--------------------|
//! | GET    | `/healthz`                    |                    |
//! | POST   | `/v1/sessions`                | `SessionConfig`    |
//! | GET    | `/v1/sessions`                |                    |
//! | GET    | `/v1/sessions/{id}`           |                    |
//! | POST   | `/v1/sessions/{id}/outcomes`  | `OutcomeRequest`   |
//! | POST   | `/v1/sessions/{id}/consent`   | `ConsentRequest`   |
//!
//! Errors are `{"error": {"code", "message", "field"?}}` with status 400
//! (malformed JSON), 401, 404, 409 (state conflict), 422 (schema or value).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::error::{ServiceError, ValidationError};
use crate::session::{ConsentRequest, OutcomeRequest, Recommendation};
use crate::store::{Applied, Snapshot, Store};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_KEY_LEN: usize = 200;

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    token: Option<Arc<str>>,
}

/// Builds the router. With `token`, every `/v1` route requires
/// `Authorization: Bearer <token>`.
pub fn router(store: Arc<Store>, token: Option<String>) -> Router {
    let state = AppState {
        store,
        token: token.map(Arc::from),
    };
    let v1 = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/outcomes", post(record_outcome))
        .route("/sessions/{id}/consent", post(consent))
        .route_layer(middleware::from_fn_with_state(state.clone(), authorize));
    Router::new()
        .route("/healthz", get(healthz))
        .nest("/v1", v1)
        .fallback(not_found)
        .with_state(state)
}

/// Error as rendered to clients.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        match err {
            ServiceError::Validation(ValidationError { field, message }) => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "validation",
                message,
                field: Some(field),
            },
            ServiceError::BadRequest(m) => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", m),
            e @ ServiceError::NotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            ServiceError::Conflict(m) => ApiError::new(StatusCode::CONFLICT, "conflict", m),
            e @ (ServiceError::Corrupt { .. } | ServiceError::Io(_)) => {
                tracing::error!(error = %e, "internal error");
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    "internal error",
                )
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
                field: self.field.as_deref(),
            },
        };
        json_response(
            self.status,
            serde_json::to_string(&body).expect("error serializes"),
        )
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Serialize)]
struct Submitted<'a> {
    seq: u64,
    replayed: bool,
    recommendation: &'a Recommendation,
    session: &'a RawValue,
}

fn json_response(status: StatusCode, body: String) -> Response {
    (
        status,
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        body,
    )
        .into_response()
}

fn snapshot_response(status: StatusCode, snapshot: &Snapshot) -> Response {
    json_response(status, snapshot.json.clone())
}

fn submitted_response(applied: &Applied) -> Response {
    let session: &RawValue =
        serde_json::from_str(&applied.snapshot.json).expect("snapshot is JSON");
    let body = Submitted {
        seq: applied.seq,
        replayed: applied.replayed,
        recommendation: &applied.recommendation,
        session,
    };
    json_response(
        StatusCode::OK,
        serde_json::to_string(&body).expect("response serializes"),
    )
}

/// Parses a JSON body. Syntax errors are 400; shape and value errors are
/// 422 with the path of the offending field.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            let field = if path == "." { String::new() } else { path };
            ServiceError::Validation(ValidationError::new(field, inner.to_string()))
        } else {
            ServiceError::BadRequest(inner.to_string())
        }
    })?;
    de.end()
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    Ok(value)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => {
            tracing::error!(error = %e, "writer task failed");
            Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                "internal error",
            ))
        }
    }
}

async fn authorize(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(request).await
}

async fn healthz() -> Response {
    json_response(StatusCode::OK, r#"{"status":"ok"}"#.to_string())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let config = parse_body(&body)?;
    let store = state.store.clone();
    let snapshot = blocking(move || store.create(config)).await?;
    tracing::info!(id = %snapshot.summary.id, "session created");
    let mut response = snapshot_response(StatusCode::CREATED, &snapshot);
    if let Ok(location) = HeaderValue::from_str(&format!("/v1/sessions/{}", snapshot.summary.id)) {
        response.headers_mut().insert(header::LOCATION, location);
    }
    Ok(response)
}

async fn list_sessions(State(state): State<AppState>) -> ApiResult {
    let list = state.store.list();
    Ok(json_response(
        StatusCode::OK,
        serde_json::to_string(&list).expect("list serializes"),
    ))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let snapshot = state.store.get(&id)?;
    Ok(snapshot_response(StatusCode::OK, &snapshot))
}

async fn record_outcome(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        None => None,
        Some(v) => match v.to_str() {
            Ok(k) if !k.is_empty() && k.len() <= MAX_KEY_LEN => Some(k.to_string()),
            _ => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "bad_request",
                    format!("Idempotency-Key must be 1..={MAX_KEY_LEN} visible ASCII characters"),
                ))
            }
        },
    };
    let request: OutcomeRequest = parse_body(&body)?;
    let store = state.store.clone();
    let applied = blocking(move || store.record_outcome(&id, request, key)).await?;
    Ok(submitted_response(&applied))
}

async fn consent(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: ConsentRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ConsentRequest {
            granted: true,
            note: None,
        }
    } else {
        parse_body(&body)?
    };
    let store = state.store.clone();
    let applied = blocking(move || store.consent(&id, request)).await?;
    Ok(submitted_response(&applied))
}
