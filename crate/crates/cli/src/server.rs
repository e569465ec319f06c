//! HTTP API for the design studio. The model is loaded once and shared
//! read-only; the only mutable state is design persistence.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use morphsim::dataset::StatsReport;
use morphsim::design::{
    hybrid_step, inverse_optimize, validate, TargetSpec, ValidationReport, DEFAULT_JOINT_STEP, DEFAULT_TOP_K,
};
use morphsim::io::CheckpointHeader;
use morphsim::{Error, GridDesign, Surrogate};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{mpsc, Mutex};

use crate::workspace::Workspace;
use crate::TrainingMetadata;

pub const DEFAULT_INVERSE_EPOCHS: usize = 22;

pub struct AppState {
    pub model: Surrogate<f32>,
    pub header: CheckpointHeader,
    pub stats: Option<StatsReport>,
    pub workspace: Workspace,
    writes: Mutex<()>,
}

impl AppState {
    pub fn new(model: Surrogate<f32>, header: CheckpointHeader, workspace: Workspace) -> AppState {
        let stats = serde_json::from_value::<TrainingMetadata>(header.metadata.clone())
            .ok()
            .map(|m| m.dataset_stats);
        AppState {
            model,
            header,
            stats,
            workspace,
            writes: Mutex::new(()),
        }
    }
}

type Shared = Arc<AppState>;

pub struct ApiError(StatusCode, serde_json::Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn message(status: StatusCode, text: impl ToString) -> ApiError {
    ApiError(status, json!({ "error": text.to_string() }))
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidDesign { .. } | Error::InvalidConfig(_) | Error::Index(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        message(status, e)
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/validate", post(validate_design))
        .route("/api/simulate", post(simulate))
        .route("/api/inverse/step", post(inverse_step))
        .route("/api/inverse/run", post(inverse_run))
        .route("/api/designs/:id", get(get_design).put(put_design))
        .route("/api/model/info", get(model_info))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| message(StatusCode::INTERNAL_SERVER_ERROR, e))?
}

fn gate(state: &AppState, design: &GridDesign) -> Result<ValidationReport, ApiError> {
    let report = validate(design, state.stats.as_ref());
    if report.is_valid() {
        Ok(report)
    } else {
        Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            serde_json::to_value(&report).expect("report serializes"),
        ))
    }
}

async fn validate_design(State(state): State<Shared>, Json(design): Json<GridDesign>) -> Json<ValidationReport> {
    Json(validate(&design, state.stats.as_ref()))
}

async fn simulate(State(state): State<Shared>, Json(design): Json<GridDesign>) -> Result<Response, ApiError> {
    gate(&state, &design)?;
    let trajectory = blocking(move || Ok(state.model.simulate(&design)?)).await?;
    Ok(Json(trajectory).into_response())
}

#[derive(Debug, Deserialize)]
pub struct StepRequest {
    pub design: GridDesign,
    pub targets: TargetSpec,
    pub topk: Option<usize>,
    pub step: Option<f64>,
}

async fn inverse_step(State(state): State<Shared>, Json(req): Json<StepRequest>) -> Result<Response, ApiError> {
    gate(&state, &req.design)?;
    let ranking = blocking(move || {
        let k = req.topk.unwrap_or(DEFAULT_TOP_K);
        let step = req.step.unwrap_or(DEFAULT_JOINT_STEP);
        Ok(hybrid_step(&state.model, &req.design, &req.targets, k, step)?)
    })
    .await?;
    Ok(Json(ranking).into_response())
}

#[derive(Debug, Deserialize)]
pub struct RunRequest {
    pub design: GridDesign,
    pub targets: TargetSpec,
    pub epochs: Option<usize>,
    pub step: Option<f64>,
}

/// One line of the streamed inverse-run response.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RunEvent {
    Epoch(morphsim::design::InverseEpoch),
    Result(morphsim::design::InverseResult),
    Error { message: String },
}

fn ndjson(event: &RunEvent) -> Bytes {
    let mut line = serde_json::to_vec(event).expect("event serializes");
    line.push(b'\n');
    Bytes::from(line)
}

/// Streams one JSON line per epoch followed by the final result.
async fn inverse_run(State(state): State<Shared>, Json(req): Json<RunRequest>) -> Result<Response, ApiError> {
    gate(&state, &req.design)?;
    let epochs = req.epochs.unwrap_or(DEFAULT_INVERSE_EPOCHS);
    if epochs == 0 {
        return Err(message(StatusCode::UNPROCESSABLE_ENTITY, "epochs must be at least 1"));
    }
    req.targets.resolve(&req.design)?;
    let (tx, rx) = mpsc::unbounded_channel::<Bytes>();
    tokio::task::spawn_blocking(move || {
        let step = req.step.unwrap_or(DEFAULT_JOINT_STEP);
        let progress = |e: &morphsim::design::InverseEpoch| {
            let _ = tx.send(ndjson(&RunEvent::Epoch(e.clone())));
        };
        let last = match inverse_optimize(&state.model, &req.design, &req.targets, epochs, step, progress) {
            Ok(result) => RunEvent::Result(result),
            Err(e) => RunEvent::Error { message: e.to_string() },
        };
        let _ = tx.send(ndjson(&last));
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|chunk| (Ok::<_, Infallible>(chunk), rx))
    });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

async fn get_design(State(state): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match state.workspace.load("designs", &id, "json") {
        Ok(Some(bytes)) => Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response()),
        Ok(None) => Err(message(StatusCode::NOT_FOUND, format!("no design {id:?}"))),
        Err(e) => Err(message(StatusCode::INTERNAL_SERVER_ERROR, e)),
    }
}

async fn put_design(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(design): Json<GridDesign>,
) -> Result<Response, ApiError> {
    if !crate::workspace::valid_id(&id) {
        return Err(message(StatusCode::BAD_REQUEST, format!("invalid design id {id:?}")));
    }
    let bytes = design.to_json().into_bytes();
    let _guard = state.writes.lock().await;
    state
        .workspace
        .store("designs", &id, "json", &bytes)
        .map_err(|e| message(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    Ok(Json(json!({ "id": id, "sha256": crate::workspace::sha256_hex(&bytes) })).into_response())
}

async fn model_info(State(state): State<Shared>) -> Json<serde_json::Value> {
    let h = &state.header;
    Json(json!({
        "format_version": h.format_version,
        "layout_hash": format!("{:#018x}", h.layout_hash),
        "activation": h.activation,
        "config": h.config,
        "parameter_count": state.model.parameter_count(),
        "metadata": h.metadata,
    }))
}
