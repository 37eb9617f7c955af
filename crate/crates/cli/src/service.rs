//! HTTP edit service. All routes live under `/v1`:
//!
//! | route              | body                          | reply                 |
//! |--------------------|-------------------------------|-----------------------|
//! | `POST /encode`     | PNG                           | `{f, model_id}`       |
//! | `POST /decode`     | `{f, geometry}`               | PNG                   |
//! | `POST /mix`        | `{sources: [{f, dims}]}`      | `{f, model_id}`       |
//! | `GET /geometries`  |                               | `{geometries}`        |
//! | `GET /model-info`  |                               | config, d, checksum   |
//!
//! Uploaded images are center-cropped and resized to the model resolution.
//! The encoder was trained on renders with a black background, so uploads
//! should be masked the same way. `POST /encode?geometry=NAME` also decodes
//! the result onto that geometry and reports the reconstruction PSNR against
//! the resized upload in the `x-favae-roundtrip-psnr` header.
//!
//! Errors are JSON `{"error": ...}` with status 400 (malformed input or
//! partition violation), 404 (unknown geometry or route), 413 (body over the
//! size limit) or 503 (every request slot busy).

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use favae_core::dataset::geometry::SUPPORTED;
use favae_core::dataset::GeometrySpec;
use favae_core::metrics::psnr;
use favae_core::model::{prepare_image, FactorVae, LatentDecoder, WeightsInfo};
use favae_core::traverse::{conditioning_for, decode_png, dim_label, encode_any, selective_mix};
use favae_core::{Error, Image};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

pub const PSNR_HEADER: &str = "x-favae-roundtrip-psnr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: String,
    pub max_concurrent: usize,
    pub max_body_bytes: usize,
    pub geometries: Vec<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_concurrent: 4,
            max_body_bytes: 8 << 20,
            geometries: SUPPORTED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Read-only state shared by every request.
pub struct ServiceState {
    model: FactorVae<f32>,
    info: WeightsInfo,
    geometries: BTreeMap<String, GeometrySpec>,
    permits: Arc<Semaphore>,
}

impl ServiceState {
    pub fn new(
        model: FactorVae<f32>,
        info: WeightsInfo,
        cfg: &ServeConfig,
    ) -> favae_core::Result<Self> {
        if cfg.max_concurrent == 0 {
            return Err(Error::Config("max_concurrent must be >= 1".into()));
        }
        let geometries = cfg
            .geometries
            .iter()
            .map(|n| Ok((n.clone(), GeometrySpec::named(n)?)))
            .collect::<favae_core::Result<_>>()?;
        Ok(Self {
            model,
            info,
            geometries,
            permits: Arc::new(Semaphore::new(cfg.max_concurrent)),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.info.checksum
    }

    fn geometry(&self, name: &str) -> Result<&GeometrySpec, ApiError> {
        self.geometries.get(name).ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("unknown geometry `{name}`"),
            supported: Some(self.geometries.keys().cloned().collect()),
        })
    }

    /// Takes one request slot, as every image handler does on entry. `None`
    /// when all are busy.
    pub fn try_reserve(&self) -> Option<OwnedSemaphorePermit> {
        self.permits.clone().try_acquire_owned().ok()
    }

    fn acquire(&self) -> Result<OwnedSemaphorePermit, ApiError> {
        self.try_reserve().ok_or_else(|| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "all request slots are busy; retry later",
            )
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    supported: Option<Vec<String>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            supported: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ImageDecode(_) | Error::Partition(_) | Error::Contract(_) | Error::Shape(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::UnknownGeometry { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(s) = self.supported {
            body["supported"] = json!(s);
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub f: Vec<f64>,
    pub model_id: String,
}

#[derive(Debug, Deserialize)]
pub struct EncodeQuery {
    geometry: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRequest {
    pub f: Vec<f64>,
    pub geometry: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSource {
    pub f: Vec<f64>,
    pub dims: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRequest {
    pub sources: Vec<MixSource>,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker failed: {e}"),
        )
    })?
}

async fn encode(
    State(state): State<Arc<ServiceState>>,
    Query(query): Query<EncodeQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let _permit = state.acquire()?;
    let geometry = query
        .geometry
        .as_deref()
        .map(|g| state.geometry(g).cloned())
        .transpose()?;
    let st = state.clone();
    let (f, roundtrip) = blocking(move || {
        let image = Image::from_png(&body)?;
        let f = encode_any(&st.model, &image)?;
        let roundtrip = match geometry {
            Some(g) => {
                let r = st.model.resolution();
                let recon = st.model.decode_latent(&f, &conditioning_for(&g, r)?)?;
                Some(psnr(&prepare_image(&image, r), &recon).map_err(Error::from)?)
            }
            None => None,
        };
        Ok((f, roundtrip))
    })
    .await?;
    let mut resp = Json(EncodeResponse {
        f,
        model_id: state.model_id().to_string(),
    })
    .into_response();
    if let Some(p) = roundtrip {
        let v = HeaderValue::from_str(&format!("{p:.4}")).expect("ascii number");
        resp.headers_mut().insert(PSNR_HEADER, v);
    }
    Ok(resp)
}

async fn decode(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let _permit = state.acquire()?;
    let req: DecodeRequest = parse_json(&body)?;
    let geometry = state.geometry(&req.geometry)?.clone();
    let st = state.clone();
    let png = blocking(move || Ok(decode_png(&st.model, &req.f, &geometry)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn mix(
    State(state): State<Arc<ServiceState>>,
    body: Bytes,
) -> Result<Json<EncodeResponse>, ApiError> {
    let req: MixRequest = parse_json(&body)?;
    if req.sources.is_empty() {
        return Err(ApiError::bad_request("mix needs at least one source"));
    }
    let sources: Vec<(&[f64], &[usize])> = req
        .sources
        .iter()
        .map(|s| (s.f.as_slice(), s.dims.as_slice()))
        .collect();
    let f = selective_mix(&sources, state.model.latent_dim())?;
    if let Some(j) = f.iter().position(|v| !v.is_finite()) {
        return Err(ApiError::bad_request(format!("f[{j}] is not finite")));
    }
    Ok(Json(EncodeResponse {
        f,
        model_id: state.model_id().to_string(),
    }))
}

async fn geometries(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({ "geometries": state.geometries.keys().collect::<Vec<_>>() }))
}

async fn model_info(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let d = state.model.latent_dim();
    let named = state.info.dim_labels.as_deref().unwrap_or_default();
    let labels: Vec<String> = (0..d)
        .map(|j| named.get(j).cloned().unwrap_or_else(|| dim_label(j, None)))
        .collect();
    Json(json!({
        "d": d,
        "resolution": state.model.resolution(),
        "model_id": state.model_id(),
        "config": state.model.config(),
        "dim_labels": labels,
        "training": state.info.metadata,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "no such route; every route is under /v1",
    )
}

pub fn router(state: Arc<ServiceState>, max_body_bytes: usize) -> Router {
    let v1 = Router::new()
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/mix", post(mix))
        .route("/geometries", get(geometries))
        .route("/model-info", get(model_info));
    Router::new()
        .nest("/v1", v1)
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Bind and serve until Ctrl-C. Weights are already loaded and verified.
pub async fn serve(state: ServiceState, cfg: &ServeConfig) -> std::io::Result<()> {
    let app = router(Arc::new(state), cfg.max_body_bytes);
    let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
    log::info!("listening on http://{}/v1", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
