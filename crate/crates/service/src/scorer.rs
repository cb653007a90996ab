//! Client for an external scoring process.
//!
//! The scorer accepts `POST {base}/v1/score` with either a JSON body
//! `{"image_ref": "..."}` or raw image bytes, and answers with ranked
//! `[label, score]` pairs, bare or wrapped as `{"results": [...]}`.

use std::sync::Arc;
use std::time::Duration;

use phytoset::evaluator::{rank_order, PredictionRecord};
use phytoset::ingest::ImageId;
use phytoset::Prediction;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout_ms: u64,
    /// Retries after a rate-limited reply; the first attempt is not counted.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Upper bound on requests in flight to the scorer.
    pub max_concurrency: usize,
    pub provider_id: String,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            base_url: "http://127.0.0.1:9000".into(),
            token: None,
            timeout_ms: 10_000,
            max_retries: 5,
            initial_backoff_ms: 200,
            max_backoff_ms: 10_000,
            max_concurrency: 8,
            provider_id: "external".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unreachable: {0}")]
    ScorerUnreachable(String),
    #[error("scorer still rate limiting after {attempts} attempts")]
    ScorerRateLimited { attempts: u32 },
    #[error("malformed scorer response: {0}")]
    MalformedScorerResponse(String),
    #[error("scorer replied with status {0}")]
    ScorerStatus(u16),
    #[error("invalid scorer config: {0}")]
    InvalidConfig(String),
}

/// What to score.
#[derive(Debug, Clone)]
pub enum ImageInput {
    Ref(String),
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone)]
pub struct ScorerClient {
    config: ScorerConfig,
    http: reqwest::Client,
    permits: Arc<Semaphore>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    Bare(Vec<(String, f64)>),
    Wrapped { results: Vec<(String, f64)> },
}

impl ScorerClient {
    pub fn new(config: ScorerConfig) -> Result<Self, ScorerError> {
        if config.max_concurrency == 0 {
            return Err(ScorerError::InvalidConfig("max_concurrency must be at least 1".into()));
        }
        reqwest::Url::parse(&config.base_url).map_err(|e| ScorerError::InvalidConfig(format!("base_url: {e}")))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ScorerError::InvalidConfig(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(config.max_concurrency));
        Ok(ScorerClient { config, http, permits })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/score", self.config.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, retry: u32, headers: &HeaderMap) -> Duration {
        let cap = self.config.max_backoff_ms;
        let hinted = headers
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(|secs| secs.saturating_mul(1000));
        let exponential = self.config.initial_backoff_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(hinted.unwrap_or(exponential).min(cap))
    }

    /// Scores one image. The result is a truncated (non-full) record.
    pub async fn fetch_scores(&self, image_id: ImageId, input: &ImageInput) -> Result<Prediction, ScorerError> {
        let _permit = self.permits.acquire().await.expect("semaphore is never closed");
        let mut retry = 0;
        loop {
            let mut request = self.http.post(self.endpoint());
            if let Some(token) = &self.config.token {
                request = request.bearer_auth(token);
            }
            request = match input {
                ImageInput::Ref(r) => request.json(&serde_json::json!({ "image_ref": r })),
                ImageInput::Bytes(b) => request
                    .header(reqwest::header::CONTENT_TYPE, "application/octet-stream")
                    .body(b.clone()),
            };
            let response = request
                .send()
                .await
                .map_err(|e| ScorerError::ScorerUnreachable(e.to_string()))?;
            let status = response.status();
            if status == StatusCode::TOO_MANY_REQUESTS {
                if retry >= self.config.max_retries {
                    return Err(ScorerError::ScorerRateLimited { attempts: retry + 1 });
                }
                let wait = self.backoff(retry, response.headers());
                tracing::debug!(retry, wait_ms = wait.as_millis() as u64, "scorer rate limited");
                tokio::time::sleep(wait).await;
                retry += 1;
                continue;
            }
            if !status.is_success() {
                return Err(ScorerError::ScorerStatus(status.as_u16()));
            }
            let body = response
                .bytes()
                .await
                .map_err(|e| ScorerError::ScorerUnreachable(e.to_string()))?;
            return parse_reply(&body, image_id, &self.config.provider_id);
        }
    }
}

/// Parses a scorer reply into a validated record, ordered by the usual rank
/// rule.
pub fn parse_reply(body: &[u8], image_id: ImageId, provider_id: &str) -> Result<Prediction, ScorerError> {
    let reply: Reply =
        serde_json::from_slice(body).map_err(|e| ScorerError::MalformedScorerResponse(e.to_string()))?;
    let mut ranked = match reply {
        Reply::Bare(r) | Reply::Wrapped { results: r } => r,
    };
    ranked.sort_by(rank_order);
    let record = PredictionRecord {
        image_id,
        provider_id: provider_id.to_string(),
        ranked,
        is_full_distribution: false,
    };
    record
        .validate()
        .map_err(|e| ScorerError::MalformedScorerResponse(e.to_string()))?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_shapes() {
        let id = || ImageId::from("i");
        let bare = parse_reply(br#"[["Quercus ilex",0.3],["Quercus robur",0.6]]"#, id(), "s").unwrap();
        assert_eq!(bare.ranked[0], ("Quercus robur".to_string(), 0.6));
        assert!(!bare.is_full_distribution);
        let wrapped = parse_reply(br#"{"results":[["a",0.5]]}"#, id(), "s").unwrap();
        assert_eq!(wrapped.ranked.len(), 1);
        assert!(matches!(
            parse_reply(b"{not json", id(), "s"),
            Err(ScorerError::MalformedScorerResponse(_))
        ));
        assert!(matches!(
            parse_reply(br#"[["a",1.5]]"#, id(), "s"),
            Err(ScorerError::MalformedScorerResponse(_))
        ));
    }

    #[test]
    fn backoff_schedule() {
        let client = ScorerClient::new(ScorerConfig {
            initial_backoff_ms: 100,
            max_backoff_ms: 1000,
            ..ScorerConfig::default()
        })
        .unwrap();
        let none = HeaderMap::new();
        assert_eq!(client.backoff(0, &none), Duration::from_millis(100));
        assert_eq!(client.backoff(2, &none), Duration::from_millis(400));
        assert_eq!(client.backoff(9, &none), Duration::from_millis(1000));
        let mut hinted = HeaderMap::new();
        hinted.insert(RETRY_AFTER, "0".parse().unwrap());
        assert_eq!(client.backoff(3, &hinted), Duration::ZERO);
    }
}
