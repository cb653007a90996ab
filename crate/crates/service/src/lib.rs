//! Identification service over a pluggable score provider.

mod app;
mod scorer;

pub use app::{router, ApiError, AppState, ScoreProvider};
pub use scorer::{parse_reply, ImageInput, ScorerClient, ScorerConfig, ScorerError};

use std::net::SocketAddr;
use std::sync::Arc;

use phytoset::catalog::SpeciesCatalog;
use phytoset::Policy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub max_body_bytes: usize,
    /// `passthrough` or `external`.
    pub provider: String,
    pub scorer: ScorerConfig,
    pub policy: Policy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_addr: "127.0.0.1:8080".into(),
            max_body_bytes: 1 << 20,
            provider: "passthrough".into(),
            scorer: ScorerConfig::default(),
            policy: Policy::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid service config: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceConfig {
    /// Applies `LISTEN_ADDR`, `SCORER_URL`, `SCORER_TOKEN` and
    /// `MAX_BODY_BYTES`. Setting `SCORER_URL` selects the external provider.
    pub fn apply_env<F: Fn(&str) -> Option<String>>(&mut self, lookup: F) -> Result<(), ServiceError> {
        if let Some(v) = lookup("LISTEN_ADDR") {
            self.listen_addr = v;
        }
        if let Some(v) = lookup("SCORER_URL") {
            self.scorer.base_url = v;
            self.provider = "external".into();
        }
        if let Some(v) = lookup("SCORER_TOKEN") {
            self.scorer.token = Some(v);
        }
        if let Some(v) = lookup("MAX_BODY_BYTES") {
            self.max_body_bytes = v
                .trim()
                .parse()
                .map_err(|_| ServiceError::Config(format!("MAX_BODY_BYTES `{v}` is not a byte count")))?;
        }
        Ok(())
    }

    pub fn state(&self, catalog: SpeciesCatalog) -> Result<AppState, ServiceError> {
        self.policy
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let provider = match self.provider.as_str() {
            "passthrough" => ScoreProvider::Passthrough,
            "external" => ScoreProvider::External(Arc::new(ScorerClient::new(self.scorer.clone())?)),
            other => return Err(ServiceError::Config(format!("unknown provider `{other}`"))),
        };
        Ok(AppState {
            catalog: Arc::new(catalog),
            policy: Arc::new(self.policy.clone()),
            provider,
        })
    }
}

/// Binds `config.listen_addr` and serves until the future is dropped.
pub async fn serve(config: &ServiceConfig, catalog: SpeciesCatalog) -> Result<(), ServiceError> {
    let addr: SocketAddr = config
        .listen_addr
        .parse()
        .map_err(|_| ServiceError::Config(format!("bad listen address `{}`", config.listen_addr)))?;
    let app = router(config.state(catalog)?, config.max_body_bytes);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await?;
    Ok(())
}
