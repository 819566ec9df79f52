//! HTTP front end for the SCV models.
//!
//! All endpoints take and return JSON built by [`scvlab_core::wire`], so a
//! response body is byte-identical to the output of the matching `scvlab`
//! command. Model requests name either inline `params` or a stored
//! `scenario`.

pub mod registry;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use scvlab_core::model::ModelKind;
use scvlab_core::sensitivity::DEFAULT_STEP;
use scvlab_core::wire::{self, from_json, to_json, CostsDoc, ErrorDoc, Horizon, ParamsDoc};
use scvlab_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use registry::{Registry, Scenario, ScenarioInput};

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
}

/// Builds the service. With `static_dir`, files under it are served at `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/scv", post(scv))
        .route("/api/sensitivity", post(sensitivity))
        .route("/api/whatif", post(whatif))
        .route("/api/calibrate", post(calibrate))
        .route("/api/scenarios", get(list_scenarios))
        .route("/api/scenarios/{id}", get(get_scenario).put(put_scenario))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorDoc,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::NonConvergence { .. } | Error::Ambiguous { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError {
            status,
            body: ErrorDoc::from(&e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, json_body(&self.body)).into_response()
    }
}

fn json_body<T: Serialize>(value: &T) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], to_json(value))
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: &T) -> ApiResult {
    Ok(json_body(value).into_response())
}

fn not_found(id: &str) -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        body: ErrorDoc {
            error: format!("no scenario {id:?}"),
            field: Some("scenario".into()),
        },
    }
}

fn resolve_source(
    params: Option<ParamsDoc>,
    scenario: Option<String>,
    registry: &Registry,
) -> Result<ParamsDoc, ApiError> {
    match (params, scenario) {
        (Some(p), None) => Ok(p),
        (None, Some(id)) => registry.get(&id).map(|s| s.params).ok_or_else(|| not_found(&id)),
        _ => Err(Error::Validation {
            field: "params".into(),
            message: "give exactly one of params or scenario".into(),
        }
        .into()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScvRequest {
    #[serde(default)]
    params: Option<ParamsDoc>,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default = "default_model")]
    model: ModelKind,
    #[serde(default)]
    horizon: Horizon,
}

fn default_model() -> ModelKind {
    ModelKind::ExponentialClosed
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitivityRequest {
    #[serde(default)]
    params: Option<ParamsDoc>,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default)]
    verify: bool,
    #[serde(default)]
    step: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfRequest {
    #[serde(default)]
    params: Option<ParamsDoc>,
    #[serde(default)]
    scenario: Option<String>,
    tau_from: f64,
    tau_to: f64,
    #[serde(default = "full_share")]
    share_delta: f64,
}

fn full_share() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateRequest {
    csv: String,
    #[serde(default)]
    costs: Option<CostsDoc>,
}

async fn health() -> ApiResult {
    ok(&serde_json::json!({ "status": "ok" }))
}

async fn scv(State(state): State<AppState>, body: String) -> ApiResult {
    let req: ScvRequest = from_json(&body)?;
    let params = resolve_source(req.params, req.scenario, &state.registry)?;
    ok(&wire::compute_scv(&params, req.model, req.horizon)?)
}

async fn sensitivity(State(state): State<AppState>, body: String) -> ApiResult {
    let req: SensitivityRequest = from_json(&body)?;
    let params = resolve_source(req.params, req.scenario, &state.registry)?;
    let step = req.verify.then(|| req.step.unwrap_or(DEFAULT_STEP));
    ok(&wire::compute_sensitivity(&params, step)?)
}

async fn whatif(State(state): State<AppState>, body: String) -> ApiResult {
    let req: WhatIfRequest = from_json(&body)?;
    let params = resolve_source(req.params, req.scenario, &state.registry)?;
    ok(&wire::compute_whatif(&params, req.tau_from, req.tau_to, req.share_delta)?)
}

async fn calibrate(body: String) -> ApiResult {
    let req: CalibrateRequest = from_json(&body)?;
    let costs = req.costs.map(|c| c.resolve()).transpose()?;
    ok(&wire::compute_calibration(&req.csv, costs.as_ref())?)
}

async fn list_scenarios(State(state): State<AppState>) -> ApiResult {
    ok(&state.registry.list())
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let scenario = state.registry.get(&id).ok_or_else(|| not_found(&id))?;
    ok(&scenario)
}

async fn put_scenario(State(state): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult {
    let input: ScenarioInput = from_json(&body)?;
    let registry = state.registry.clone();
    let (scenario, created) = tokio::task::spawn_blocking(move || registry.put(&id, input))
        .await
        .map_err(|e| Error::Io(e.to_string()))??;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, json_body(&scenario)).into_response())
}
