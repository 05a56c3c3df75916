//! HTTP inference service.
//!
//! One checkpoint is loaded at startup (in the background; requests get
//! 503 until it is ready) and shared read-only by all handlers. Every
//! error is a JSON body `{"error": code, "detail": text}`.
//!
//! | route                 | body                                                   |
//! |-----------------------|--------------------------------------------------------|
//! | `GET /v1/health`      | `{"status":"ok","model_loaded":true}`                  |
//! | `GET /v1/model`       | image/patch geometry, channels, mode, checkpoint step  |
//! | `POST /v1/reconstruct`| [`ReconstructRequest`] → [`ReconstructResponse`]        |

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use planmae_core::{Anchor, Checkpoint, Mae, MaskPlan, MaskSpec, MetricPair, Mode, Raster, Side, Strategy};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::config::ServiceSettings;

pub const MAX_BODY_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code,
            detail: detail.into(),
        }
    }

    fn bad(code: &'static str, detail: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, detail.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

/// A checkpoint ready to serve.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: Mae<f32>,
    pub mode: Mode,
    pub step: u64,
}

impl LoadedModel {
    pub fn from_checkpoint(ck: Checkpoint) -> planmae_core::Result<Self> {
        Ok(Self {
            mode: Mode::from_channels(ck.config.channels)?,
            step: ck.step,
            model: Mae::new(ck.config, ck.params)?,
        })
    }
}

#[derive(Debug, Default)]
pub struct AppState {
    model: OnceLock<LoadedModel>,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn with_model(model: LoadedModel) -> Arc<Self> {
        let state = Self::default();
        state.set_model(model);
        Arc::new(state)
    }

    /// Installs the model; later calls are ignored (no hot swap).
    pub fn set_model(&self, model: LoadedModel) {
        let _ = self.model.set(model);
    }

    fn loaded(&self) -> Result<&LoadedModel, ApiError> {
        self.model.get().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "model_loading",
                "checkpoint is still loading",
            )
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructRequest {
    /// Base64 PNG, optionally as a `data:image/png;base64,` URL.
    pub image: String,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub side: Option<Side>,
    #[serde(default)]
    pub anchor: Option<Anchor>,
    #[serde(default)]
    pub masked_indices: Option<Vec<usize>>,
    #[serde(default)]
    pub return_metrics: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructResponse {
    pub reconstruction: String,
    pub masked_indices: Vec<usize>,
    pub realized_ratio: f64,
    pub metrics: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub image_size: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub mode: Mode,
    pub checkpoint_step: u64,
}

impl ReconstructRequest {
    fn plan(&self, model: &Mae<f32>) -> Result<MaskPlan, ApiError> {
        let grid = model.grid();
        match (&self.masked_indices, self.strategy) {
            (Some(_), Some(_)) => Err(ApiError::bad(
                "bad_request",
                "give either a strategy or masked_indices, not both",
            )),
            (None, None) => Err(ApiError::bad("bad_request", "give a strategy or masked_indices")),
            (Some(indices), None) => {
                if self.ratio.is_some() || self.seed.is_some() || self.side.is_some() || self.anchor.is_some()
                {
                    return Err(ApiError::bad(
                        "bad_request",
                        "strategy parameters given with masked_indices",
                    ));
                }
                MaskPlan::explicit(grid, indices).map_err(|e| ApiError::bad("bad_mask", e))
            }
            (None, Some(Strategy::Explicit)) => Err(ApiError::bad(
                "bad_request",
                "the explicit strategy is expressed with masked_indices",
            )),
            (None, Some(strategy)) => MaskSpec {
                strategy,
                ratio: self.ratio.unwrap_or(strategy.default_ratio()),
                seed: self.seed.unwrap_or(0),
                side: self.side,
                anchor: self.anchor,
            }
            .plan(grid)
            .map_err(|e| ApiError::bad("bad_mask", e)),
        }
    }

    fn decode_image(&self, loaded: &LoadedModel) -> Result<Raster, ApiError> {
        let b64 = match self.image.split_once(";base64,") {
            Some((prefix, rest)) if prefix.starts_with("data:") => rest,
            _ => self.image.as_str(),
        };
        let bytes = STANDARD
            .decode(b64.trim())
            .map_err(|e| ApiError::bad("bad_image", format!("invalid base64: {e}")))?;
        let grid = loaded.model.grid();
        Raster::from_png_bytes(&bytes, loaded.mode, Some((grid.height(), grid.width())), false).map_err(|e| {
            match e {
                planmae_core::Error::GeometryMismatch(d) => ApiError::bad("bad_geometry", d),
                other => ApiError::bad("bad_image", format!("invalid PNG: {other}")),
            }
        })
    }
}

/// Runs one request end to end. Pure in `(model, request)`.
pub fn handle_reconstruct(
    loaded: &LoadedModel,
    req: &ReconstructRequest,
) -> Result<ReconstructResponse, ApiError> {
    let image = req.decode_image(loaded)?;
    let plan = req.plan(&loaded.model)?;
    let internal =
        |e: planmae_core::Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string());
    let recon = loaded.model.reconstruct(&image, &plan).map_err(internal)?;
    let metrics = if req.return_metrics {
        let pair = MetricPair::compute(&recon, &image).map_err(internal)?;
        Some(serde_json::to_value(pair).expect("metrics serialize"))
    } else {
        None
    };
    Ok(ReconstructResponse {
        reconstruction: STANDARD.encode(recon.to_png_bytes().map_err(internal)?),
        realized_ratio: plan.realized_ratio(),
        masked_indices: plan.masked,
        metrics,
    })
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    state.loaded()?;
    Ok(Json(serde_json::json!({ "status": "ok", "model_loaded": true })))
}

async fn model_card(State(state): State<Arc<AppState>>) -> Result<Json<ModelCard>, ApiError> {
    let loaded = state.loaded()?;
    let config = loaded.model.config();
    let grid = loaded.model.grid();
    Ok(Json(ModelCard {
        image_size: config.image_size,
        patch_size: config.patch_size,
        rows: grid.rows,
        cols: grid.cols,
        channels: config.channels,
        mode: loaded.mode,
        checkpoint_step: loaded.step,
    }))
}

async fn reconstruct(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ReconstructResponse>, ApiError> {
    let body = body.map_err(|rej| {
        if rej.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(rej.status(), "too_large", "request body exceeds the size limit")
        } else {
            ApiError::bad("bad_request", rej.body_text())
        }
    })?;
    state.loaded()?;
    let req: ReconstructRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad("bad_request", format!("invalid JSON: {e}")))?;
    let shared = state.clone();
    tokio::task::spawn_blocking(move || handle_reconstruct(shared.loaded()?, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map(Json)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed on this route",
    )
}

/// CORS for the given origins; `*` anywhere in the list allows any origin.
pub fn cors_layer(origins: &[String]) -> anyhow::Result<CorsLayer> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        return Ok(layer.allow_origin(Any));
    }
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).with_context(|| format!("invalid CORS origin {o:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(values)))
}

pub fn router(state: Arc<AppState>, cors: CorsLayer, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model_card))
        .route("/v1/reconstruct", post(reconstruct))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .layer(cors)
        .with_state(state)
}

/// Binds, loads `checkpoint` in the background and serves until Ctrl-C.
/// A checkpoint that fails to load stops the server with that error.
pub async fn serve(settings: ServiceSettings, checkpoint: PathBuf) -> anyhow::Result<()> {
    let state = AppState::new();
    let app = router(
        state.clone(),
        cors_layer(&settings.cors_origins)?,
        settings.max_body_bytes,
    );
    let listener = tokio::net::TcpListener::bind((settings.host.as_str(), settings.port))
        .await
        .with_context(|| format!("binding {}:{}", settings.host, settings.port))?;
    eprintln!("listening on http://{}", listener.local_addr()?);

    let loader = {
        let state = state.clone();
        async move {
            let path = checkpoint.clone();
            let loaded = tokio::task::spawn_blocking(move || {
                planmae_core::load_checkpoint(&path).and_then(LoadedModel::from_checkpoint)
            })
            .await?
            .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            eprintln!("model loaded (step {})", loaded.step);
            state.set_model(loaded);
            std::future::pending::<anyhow::Result<()>>().await
        }
    };
    let server = axum::serve(listener, app).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    });
    tokio::select! {
        r = server => r.context("server error"),
        r = loader => r,
    }
}
