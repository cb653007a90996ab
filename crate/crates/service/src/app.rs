//! HTTP front end: `POST /v1/identify` and `GET /v1/health`.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use phytoset::catalog::SpeciesCatalog;
use phytoset::evaluator::PredictionRecord;
use phytoset::identify::{make_suggestions, IdentifyError};
use phytoset::ingest::ImageId;
use phytoset::{Policy, Prediction, Response as Identification};
use serde::Deserialize;
use serde_json::json;

use crate::scorer::{ImageInput, ScorerClient};

/// Where scores come from when a request names an image instead of
/// carrying scores.
#[derive(Debug, Clone)]
pub enum ScoreProvider {
    /// Requests must carry their own score vector.
    Passthrough,
    External(Arc<ScorerClient>),
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub catalog: Arc<SpeciesCatalog>,
    pub policy: Arc<Policy>,
    pub provider: ScoreProvider,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentifyRequest {
    scores: Option<Vec<(String, f64)>>,
    image_ref: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    InvalidPayload(String),
    UpstreamFailure(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::InvalidPayload(m) => (StatusCode::BAD_REQUEST, "InvalidPayload", m),
            ApiError::UpstreamFailure(m) => (StatusCode::BAD_GATEWAY, "UpstreamFailure", m),
        };
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/v1/identify", post(identify))
        .route("/v1/health", get(health))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn identify(State(state): State<AppState>, body: Bytes) -> Result<Json<Identification>, ApiError> {
    let started = Instant::now();
    let result = respond(&state, &body).await;
    let elapsed_ms = started.elapsed().as_millis() as u64;
    match &result {
        Ok(r) => tracing::info!(elapsed_ms, status = 200, suggestions = r.suggestions.len(), "identify"),
        Err(e) => tracing::info!(elapsed_ms, error = ?e, "identify"),
    }
    result.map(|mut r| {
        r.elapsed_ms = elapsed_ms;
        Json(r)
    })
}

async fn respond(state: &AppState, body: &[u8]) -> Result<Identification, ApiError> {
    let request: IdentifyRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::InvalidPayload(e.to_string()))?;
    let prediction = match (request.scores, request.image_ref) {
        (Some(scores), None) => {
            let p = PredictionRecord {
                image_id: ImageId::from("request"),
                provider_id: "passthrough".into(),
                ranked: scores,
                is_full_distribution: false,
            };
            p.validate().map_err(|e| ApiError::InvalidPayload(e.to_string()))?;
            p
        }
        (None, Some(image_ref)) => fetch(state, image_ref).await?,
        _ => {
            return Err(ApiError::InvalidPayload(
                "body must have exactly one of `scores` or `image_ref`".into(),
            ))
        }
    };
    make_suggestions(&prediction, &state.catalog, &state.policy).map_err(|e| match e {
        IdentifyError::UnknownTaxon(_) | IdentifyError::ScoreOutOfRange(_) => ApiError::InvalidPayload(e.to_string()),
        IdentifyError::InvalidPolicy(_) => ApiError::UpstreamFailure(e.to_string()),
    })
}

async fn fetch(state: &AppState, image_ref: String) -> Result<Prediction, ApiError> {
    let ScoreProvider::External(client) = &state.provider else {
        return Err(ApiError::InvalidPayload("no scorer configured; send `scores`".into()));
    };
    let id = ImageId::from_uri(&image_ref);
    client
        .fetch_scores(id, &ImageInput::Ref(image_ref))
        .await
        .map_err(|e| ApiError::UpstreamFailure(e.to_string()))
}
