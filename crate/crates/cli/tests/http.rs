use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use morphsim::dataset::{generate_dataset, SamplerConfig};
use morphsim::design::{CandidateRanking, TargetSpec, ValidationReport};
use morphsim::io::{decode_checkpoint, encode_checkpoint};
use morphsim::sim::{canonicalize_trajectory, fit_normalizers};
use morphsim::train::Hyperparams;
use morphsim::{GridDesign, OracleConfig, Source, Surrogate, SurrogateConfig, Trajectory};
use morphsim_cli::server::{router, AppState, RunEvent};
use morphsim_cli::workspace::Workspace;
use morphsim_cli::TrainingMetadata;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    let oracle = OracleConfig {
        projection_iterations: 40,
        ..OracleConfig::default()
    };
    let ds = generate_dataset(8, 21, &SamplerConfig::default(), &oracle).unwrap();
    let trajs: Vec<Trajectory> = ds.trajectories.iter().map(canonicalize_trajectory).collect();
    let config = SurrogateConfig {
        latent: 4,
        first_width: 16,
        depth: 2,
        seed: 2,
    };
    let model = Surrogate::<f32>::new(config, fit_normalizers(&trajs, 0.98).unwrap()).unwrap();
    let metadata = TrainingMetadata {
        hyperparams: Hyperparams::default(),
        dataset_stats: ds.stats().unwrap(),
        provenance: Some(ds.provenance.clone()),
        trajectories: 8,
        best_epoch: 0,
        history: vec![],
    };
    let bytes = encode_checkpoint(&model, serde_json::to_value(&metadata).unwrap()).unwrap();
    let (model, header) = decode_checkpoint(&bytes).unwrap();
    let workspace = Workspace::open(dir).unwrap();
    router(Arc::new(AppState::new(model, header, workspace)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

fn design() -> GridDesign {
    GridDesign::regular(50.0).with_actuators(&[0.5, 0.25, 0.5, 0.75, 0.5, 0.5, 0.0, 0.5, 1.0, 0.5, 0.25, 0.5])
}

fn broken() -> GridDesign {
    let mut d = design();
    d.beams.pop();
    d
}

fn value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}

#[tokio::test]
async fn validate_and_simulate_gate_on_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/api/validate", Some(value(&design()))).await;
    assert_eq!(status, StatusCode::OK);
    let report: ValidationReport = serde_json::from_slice(&body).unwrap();
    assert!(report.is_valid());

    let (status, body) = call(&app, "POST", "/api/simulate", Some(value(&broken()))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let report: ValidationReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(report.errors[0].code.to_string(), "JOINT_CONFIG_ERROR");

    let (status, body) = call(&app, "POST", "/api/simulate", Some(value(&design()))).await;
    assert_eq!(status, StatusCode::OK);
    let t: Trajectory = serde_json::from_slice(&body).unwrap();
    assert_eq!(t.frames.len(), 12);
    assert_eq!(t.source, Source::Surrogate);
    let (_, again) = call(&app, "POST", "/api/simulate", Some(value(&design()))).await;
    assert_eq!(body, again);
}

#[tokio::test]
async fn hybrid_step_returns_five_sorted_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let targets = json!([{"joint": 0, "x": -50.0, "y": -50.0, "z": 5.0}, {"joint": 8, "x": 50.0, "y": 50.0, "z": 5.0}]);
    let body = json!({"design": value(&design()), "targets": targets, "topk": 5});
    let (status, bytes) = call(&app, "POST", "/api/inverse/step", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&bytes));
    let ranking: CandidateRanking = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(ranking.candidates.len(), 5);
    for w in ranking.candidates.windows(2) {
        assert!(w[0].score <= w[1].score);
    }

    let bad_targets = json!({"design": value(&design()), "targets": [{"joint": 77, "x": 0.0, "y": 0.0, "z": 0.0}]});
    let (status, _) = call(&app, "POST", "/api/inverse/step", Some(bad_targets)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn inverse_run_streams_a_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let targets: TargetSpec =
        serde_json::from_value(json!([{"joint": 2, "x": 50.0, "y": -50.0, "z": 8.0}])).unwrap();
    let body = json!({"design": value(&design()), "targets": value(&targets), "epochs": 2, "step": 2.0});
    let (status, bytes) = call(&app, "POST", "/api/inverse/run", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    let events: Vec<RunEvent> = String::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events.len(), 3);
    let mut scores = Vec::new();
    for e in &events[..2] {
        match e {
            RunEvent::Epoch(epoch) => scores.push(epoch.score),
            other => panic!("expected an epoch line, got {other:?}"),
        }
    }
    match &events[2] {
        RunEvent::Result(result) => {
            assert!(scores[0] <= result.initial_score);
            assert!(scores[1] <= scores[0]);
            assert_eq!(result.best_score, scores[1]);
        }
        other => panic!("expected the result line, got {other:?}"),
    }
}

#[tokio::test]
async fn designs_persist_and_model_info_echoes_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, _) = call(&app, "GET", "/api/designs/lamp", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "PUT", "/api/designs/lamp", Some(value(&design()))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, bytes) = call(&app, "GET", "/api/designs/lamp", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(GridDesign::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap(), design());
    let ws = Workspace::open(dir.path()).unwrap();
    assert!(ws.verify().unwrap().is_empty());
    assert!(ws.manifest().unwrap().artifacts.contains_key("designs/lamp.json"));
    let (status, _) = call(&app, "PUT", "/api/designs/bad%20id", Some(value(&design()))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, bytes) = call(&app, "GET", "/api/model/info", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(info["activation"], "relu");
    assert_eq!(info["metadata"]["trajectories"], 8);
    assert!(info["metadata"]["dataset_stats"]["grid_dimension"]["p97"].is_number());
}
