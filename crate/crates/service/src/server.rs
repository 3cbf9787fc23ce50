//! HTTP service: `POST /v1/generate`, `GET /v1/health`.

use crate::api::{prepare, run, ErrorBody, GenerationRequest};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use emoacc_model::{load_checkpoint, VaVae};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;
use tokio::sync::Semaphore;

pub const ENV_PORT: &str = "EMOACC_PORT";
pub const ENV_CHECKPOINT: &str = "EMOACC_CHECKPOINT";
pub const ENV_POOL: &str = "EMOACC_POOL_SIZE";
pub const ENV_MAX_BARS: &str = "EMOACC_MAX_BARS";

/// Read once at startup.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub checkpoint: Option<PathBuf>,
    pub pool_size: usize,
    pub max_bars: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            checkpoint: None,
            pool_size: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_bars: 64,
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by the `EMOACC_*` variables `get` returns.
    pub fn from_env_with(get: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        let mut c = Self::default();
        if let Some(v) = get(ENV_PORT) {
            c.port = v.parse().map_err(|e| anyhow::anyhow!("{ENV_PORT}={v}: {e}"))?;
        }
        if let Some(v) = get(ENV_CHECKPOINT).filter(|v| !v.is_empty()) {
            c.checkpoint = Some(PathBuf::from(v));
        }
        if let Some(v) = get(ENV_POOL) {
            c.pool_size = v.parse().map_err(|e| anyhow::anyhow!("{ENV_POOL}={v}: {e}"))?;
            anyhow::ensure!(c.pool_size > 0, "{ENV_POOL} must be positive");
        }
        if let Some(v) = get(ENV_MAX_BARS) {
            c.max_bars = v.parse().map_err(|e| anyhow::anyhow!("{ENV_MAX_BARS}={v}: {e}"))?;
        }
        Ok(c)
    }

    pub fn from_env() -> anyhow::Result<Self> {
        Self::from_env_with(|k| std::env::var(k).ok())
    }
}

pub struct LoadedModel {
    pub model: VaVae,
    pub version: String,
}

pub struct AppState {
    pub model: Option<Arc<LoadedModel>>,
    pub permits: Arc<Semaphore>,
    pub max_bars: usize,
    pub started: Instant,
}

impl AppState {
    pub fn new(model: Option<LoadedModel>, pool_size: usize, max_bars: usize) -> Self {
        Self {
            model: model.map(Arc::new),
            permits: Arc::new(Semaphore::new(pool_size.max(1))),
            max_bars,
            started: Instant::now(),
        }
    }

    /// Loads the configured checkpoint. A missing or broken checkpoint leaves
    /// the service up in the degraded state.
    pub fn from_config(cfg: &ServiceConfig) -> Self {
        let model = cfg.checkpoint.as_ref().and_then(|dir| match load_checkpoint(dir) {
            Ok((model, m)) => Some(LoadedModel { model, version: m.model_version }),
            Err(e) => {
                log::error!("checkpoint {}: {e}", dir.display());
                None
            }
        });
        Self::new(model, cfg.pool_size, cfg.max_bars)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: Option<String>,
    pub uptime_seconds: f64,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/generate", post(generate_handler))
        .with_state(state)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: if s.model.is_some() { "ok" } else { "degraded" }.into(),
        model_version: s.model.as_ref().map(|m| m.version.clone()),
        uptime_seconds: s.started.elapsed().as_secs_f64(),
    })
}

fn reject(status: StatusCode, error: &str, reason: &str, detail: String) -> Response {
    let body = ErrorBody { error: error.into(), reasons: vec![reason.into()], details: vec![detail] };
    (status, Json(body)).into_response()
}

async fn generate_handler(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(loaded) = s.model.clone() else {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "model not loaded", "model not loaded", "no checkpoint".into());
    };
    let req: GenerationRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return reject(StatusCode::BAD_REQUEST, "invalid request", "invalid JSON", e.to_string()),
    };
    let prepared = match prepare(&req, s.max_bars) {
        Ok(p) => p,
        Err(e) => {
            let status = match e {
                crate::api::RequestError::TooLong { .. } => StatusCode::PAYLOAD_TOO_LARGE,
                crate::api::RequestError::Invalid(_) => StatusCode::BAD_REQUEST,
            };
            return (status, Json(e.body())).into_response();
        }
    };
    let Ok(_permit) = s.permits.clone().acquire_owned().await else {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "shutting down", "unavailable", "worker pool closed".into());
    };
    let joined = tokio::task::spawn_blocking(move || run(&loaded.model, &loaded.version, &prepared)).await;
    match joined {
        Ok(Ok(result)) => Json(result).into_response(),
        Ok(Err(e)) => reject(StatusCode::INTERNAL_SERVER_ERROR, "generation failed", "generation failed", e.to_string()),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, "generation failed", "generation failed", e.to_string()),
    }
}

pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let state = Arc::new(AppState::from_config(&cfg));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
