use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, Multipart, Request, State};
use axum::http::{header, HeaderMap};
use axum::routing::{get, post};
use axum::{Json, Router};
use oasis_core::Exec;
use serde::{Deserialize, Serialize};

use crate::batch::{parse_batch_csv, parse_batch_json, BatchResponse};
use crate::model::{ImputeRequest, ImputeResponse, ModelInfo};
use crate::service::ImputeService;
use crate::ServeError;

pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<ImputeService>,
    /// Swap is refused outright when unset.
    pub admin_token: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model_info))
        .route("/v1/model/swap", post(swap))
        .route("/v1/impute", post(impute))
        .route("/v1/impute/batch", post(impute_batch))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: String,
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_version: st.service.version(),
    })
}

async fn model_info(State(st): State<AppState>) -> Json<ModelInfo> {
    Json(st.service.snapshot().info())
}

async fn impute(State(st): State<AppState>, body: axum::body::Bytes) -> Result<Json<ImputeResponse>, ServeError> {
    let req: ImputeRequest = serde_json::from_slice(&body).map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
    let service = st.service.clone();
    let out = tokio::task::spawn_blocking(move || service.impute_point(&req))
        .await
        .map_err(|e| ServeError::Inference(e.to_string()))??;
    Ok(Json(out))
}

/// Accepts `application/json` (array of requests), `text/csv`, or
/// `multipart/form-data` whose first field is a CSV file.
async fn impute_batch(State(st): State<AppState>, req: Request) -> Result<Json<BatchResponse>, ServeError> {
    let ctype = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let rows = if ctype.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &()).await.map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| ServeError::InvalidRequest(e.to_string()))?
            .ok_or_else(|| ServeError::InvalidRequest("multipart body has no file".into()))?;
        let text = field.text().await.map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
        parse_batch_csv(&text)?
    } else {
        let bytes = axum::body::to_bytes(req.into_body(), usize::MAX)
            .await
            .map_err(|e| ServeError::InvalidRequest(e.to_string()))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| ServeError::InvalidRequest("body is not UTF-8".into()))?;
        if ctype.starts_with("application/json") || text.trim_start().starts_with('[') {
            parse_batch_json(text)?
        } else {
            parse_batch_csv(text)?
        }
    };
    let service = st.service.clone();
    let out = tokio::task::spawn_blocking(move || service.impute_batch(rows, Exec::Parallel))
        .await
        .map_err(|e| ServeError::Inference(e.to_string()))?;
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRequest {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapResponse {
    pub previous_version: String,
    pub model_version: String,
}

async fn swap(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<SwapRequest>,
) -> Result<Json<SwapResponse>, ServeError> {
    let expected = st.admin_token.as_deref().ok_or(ServeError::SwapDisabled)?;
    let given = headers
        .get(ADMIN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    if given != Some(expected) {
        return Err(ServeError::Unauthorized);
    }
    let previous_version = st.service.version();
    let service = st.service.clone();
    let model_version = tokio::task::spawn_blocking(move || service.swap_checkpoint(&body.path))
        .await
        .map_err(|e| ServeError::Inference(e.to_string()))??;
    Ok(Json(SwapResponse {
        previous_version,
        model_version,
    }))
}

/// Bind and serve until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, version = %state.service.version(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
