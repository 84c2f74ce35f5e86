//! Inference-only HTTP service over an immutable model.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use jointvae_core::eval::raster::{image_to_png, png_to_image};
use jointvae_core::eval::TRAVERSAL_QUANTILES;
use jointvae_core::distributions::inverse_normal_cdf;
use jointvae_core::model::Model;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 4 * 1024 * 1024;

const INDEX_HTML: &str = "<!doctype html><title>jointvae</title>\
<p>Model service is running. Endpoints: GET /api/model, POST /api/decode, POST /api/encode.\
 Start with --static DIR to serve an explorer bundle here.</p>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub continuous_dim: usize,
    pub discrete_dims: Vec<usize>,
    pub image_shape: [usize; 3],
    pub temperature: f64,
    pub traversal_range: [f64; 2],
}

impl ModelInfo {
    pub fn of(model: &Model<f32>) -> Self {
        let spec = model.latent_spec();
        let (lo, hi) = TRAVERSAL_QUANTILES;
        ModelInfo {
            continuous_dim: spec.continuous_dim,
            discrete_dims: spec.discrete_dims.clone(),
            image_shape: model.config().image_shape,
            temperature: spec.temperature,
            traversal_range: [
                inverse_normal_cdf(lo).expect("valid quantile"),
                inverse_normal_cdf(hi).expect("valid quantile"),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub continuous: Vec<f64>,
    pub discrete: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResponse {
    pub image_png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub image_png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub alphas: Vec<Vec<f64>>,
}

/// A JSON error body `{"error": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    field: Option<&'static str>,
    message: String,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            field: Some(field),
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            field: None,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.field {
            Some(f) => json!({"error": self.message, "field": f}),
            None => json!({"error": self.message}),
        };
        (self.status, Json(body)).into_response()
    }
}

struct AppState {
    model: Model<f32>,
    info: ModelInfo,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad("body", format!("invalid JSON request: {e}")))
}

/// Builds the one-hot latent for a decode request, validating every field.
pub fn latent_for(info: &ModelInfo, req: &DecodeRequest) -> Result<Vec<f64>, ApiError> {
    if req.continuous.len() != info.continuous_dim {
        return Err(ApiError::bad(
            "continuous",
            format!("expected {} values, got {}", info.continuous_dim, req.continuous.len()),
        ));
    }
    if let Some(i) = req.continuous.iter().position(|v| !v.is_finite()) {
        return Err(ApiError::bad("continuous", format!("value {i} is not finite")));
    }
    if req.discrete.len() != info.discrete_dims.len() {
        return Err(ApiError::bad(
            "discrete",
            format!("expected {} category indices, got {}", info.discrete_dims.len(), req.discrete.len()),
        ));
    }
    let mut z = req.continuous.clone();
    for (i, (&k, &n)) in req.discrete.iter().zip(&info.discrete_dims).enumerate() {
        if k >= n {
            return Err(ApiError::bad("discrete", format!("variable {i}: category {k} out of range 0..{n}")));
        }
        z.extend((0..n).map(|c| if c == k { 1.0 } else { 0.0 }));
    }
    Ok(z)
}

fn decode_now(state: &AppState, req: &DecodeRequest) -> Result<DecodeResponse, ApiError> {
    let z = latent_for(&state.info, req)?;
    let img = state.model.decode_f64(&z).map_err(|e| ApiError::internal(e.to_string()))?;
    let png = image_to_png(img.data(), state.info.image_shape, &[]).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(DecodeResponse {
        image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
    })
}

fn encode_now(state: &AppState, req: &EncodeRequest) -> Result<EncodeResponse, ApiError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(req.image_png_base64.trim())
        .map_err(|e| ApiError::bad("image_png_base64", format!("not valid base64: {e}")))?;
    let [c, h, w] = state.info.image_shape;
    let img = png_to_image(&bytes, c).map_err(|e| ApiError::bad("image_png_base64", format!("not a decodable PNG: {e}")))?;
    if (img.height, img.width) != (h, w) {
        return Err(ApiError::bad(
            "image_png_base64",
            format!("image is {}x{}, model expects {h}x{w}", img.width, img.height),
        ));
    }
    let x = jointvae_core::autodiff::Tensor::new(vec![1, c, h, w], img.planes).map_err(|e| ApiError::internal(e.to_string()))?;
    let post = state.model.encode(&x).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(EncodeResponse {
        mu: post.gaussian.mu.clone(),
        logvar: post.gaussian.logvar.clone(),
        alphas: post.concretes.iter().map(|c| c.probs()).collect(),
    })
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    Json(state.info.clone())
}

async fn decode(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<DecodeResponse>, ApiError> {
    let req: DecodeRequest = parse_body(&body)?;
    tokio::task::spawn_blocking(move || decode_now(&state, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn encode(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<EncodeResponse>, ApiError> {
    let req: EncodeRequest = parse_body(&body)?;
    tokio::task::spawn_blocking(move || encode_now(&state, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        field: None,
        message: "no such route".into(),
    }
}

/// Routes for `model`; static files from `static_dir` are served under `/`.
pub fn router(model: Model<f32>, static_dir: Option<PathBuf>) -> Router {
    let info = ModelInfo::of(&model);
    let state = Arc::new(AppState { model, info });
    let api = Router::new()
        .route("/api/model", get(model_info))
        .route("/api/decode", post(decode))
        .route("/api/encode", post(encode))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).not_found_service(axum::routing::any(not_found))),
        None => api.route("/", get(|| async { Html(INDEX_HTML) })).fallback(not_found),
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
