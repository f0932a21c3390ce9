mod common;

use std::path::Path;
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use newswatch::corpus::{ActionClass, AnnotationLabel, TargetClass};
use newswatch_cli::config::PipelineConfig;
use newswatch_cli::service::{router, AppState, Trainer, TrainingResult};
use serde_json::{json, Value};
use tower::ServiceExt;

fn prepared(steps: &[&str]) -> tempfile::TempDir {
    let dir = workspace();
    for command in steps {
        step(dir.path(), command);
    }
    dir
}

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig::load(Some(&config_path(dir)), None).unwrap()
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let mut request = Request::builder().method(method).uri(uri);
    if body.is_some() {
        request = request.header("content-type", "application/json");
    }
    let request = request.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

async fn post(app: &axum::Router, uri: &str, body: impl Into<String>) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body.into())).await
}

fn cold_app(dir: &Path) -> axum::Router {
    router(Arc::new(AppState::load(config(dir), true).unwrap()))
}

fn event(article_id: &str, annotator_id: &str) -> AnnotationLabel {
    AnnotationLabel {
        article_id: article_id.into(),
        is_event: true,
        target: Some(TargetClass::Religion),
        action: Some(ActionClass::Vandalism),
        annotator_id: annotator_id.into(),
    }
}

async fn first_queued(app: &axum::Router) -> String {
    let (_, body) = get(app, "/api/queue?limit=1").await;
    body["items"][0]["article_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn cold_queue_serves_pending_items() {
    let dir = prepared(&["ingest", "filter"]);
    let app = cold_app(dir.path());
    let (status, body) = get(&app, "/api/queue?limit=3").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["pending"], 20);
    let items = body["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    for item in items {
        for field in ["article_id", "title", "body", "sentences", "sample_weight", "key_sentence_indices"] {
            assert!(!item[field].is_null(), "{field} missing");
        }
        assert_eq!(item["bag_probability"], 0.5);
    }
    assert_eq!(get(&app, "/api/queue").await.1["items"].as_array().unwrap().len(), 10);
    assert_eq!(get(&app, "/api/queue?limit=x").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/queue?colour=red").await.0, StatusCode::BAD_REQUEST);

    // the queue is persisted, so a restart serves the same items
    let again = cold_app(dir.path());
    assert_eq!(get(&again, "/api/queue?limit=3").await.1, body);
}

#[tokio::test]
async fn posted_label_is_durable_and_leaves_the_annotators_queue() {
    let dir = prepared(&["ingest", "filter"]);
    let app = cold_app(dir.path());
    let id = first_queued(&app).await;
    let label = event(&id, "ann9");
    let (status, body) = post(&app, "/api/labels", serde_json::to_string(&label).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["appended"], true);

    let text = std::fs::read_to_string(dir.path().join("labels.jsonl")).unwrap();
    let last: AnnotationLabel = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last, label);
    let lines = text.lines().count();

    let (_, mine) = get(&app, "/api/queue?limit=100&annotator_id=ann9").await;
    assert!(mine["items"].as_array().unwrap().iter().all(|i| i["article_id"] != id.as_str()));
    let (_, article) = get(&app, &format!("/api/articles/{id}")).await;
    assert_eq!(article["labels"].as_array().unwrap().len(), 1);
    assert_eq!(article["article"]["id"], id.as_str());

    // a repeat of the same label is acknowledged without a second record
    let (status, body) = post(&app, "/api/labels", serde_json::to_string(&label).unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["appended"], false);
    assert_eq!(std::fs::read_to_string(dir.path().join("labels.jsonl")).unwrap().lines().count(), lines);

    let (_, status) = get(&app, "/api/status").await;
    assert_eq!(status["queue"]["labeled"], 1);
    assert_eq!(status["queue"]["pending"], 19);
    assert_eq!(status["cold"], true);
}

#[tokio::test]
async fn bad_requests_and_missing_resources() {
    let dir = prepared(&["ingest", "filter"]);
    let app = cold_app(dir.path());
    let id = first_queued(&app).await;

    assert_eq!(post(&app, "/api/labels", "{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/labels", r#"{"article_id":"x"}"#).await.0, StatusCode::BAD_REQUEST);
    let mut contradictory = event(&id, "ann9");
    contradictory.is_event = false;
    let (status, body) = post(&app, "/api/labels", serde_json::to_string(&contradictory).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    assert_eq!(post(&app, "/api/labels", serde_json::to_string(&event(&id, "")).unwrap()).await.0, StatusCode::BAD_REQUEST);

    let unknown = event("no-such-article", "ann9");
    assert_eq!(post(&app, "/api/labels", serde_json::to_string(&unknown).unwrap()).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/articles/no-such-article").await.0, StatusCode::NOT_FOUND);

    // an article in the corpus that was never queued
    let queued: Vec<String> = get(&app, "/api/queue?limit=100").await.1["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["article_id"].as_str().unwrap().to_string())
        .collect();
    let filtered = std::fs::read_to_string(dir.path().join("out/filtered.jsonl")).unwrap();
    let outside = filtered
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .find(|a| !queued.contains(a))
        .unwrap();
    let (status, _) = post(&app, "/api/labels", serde_json::to_string(&event(&outside, "ann9")).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/api/articles/{outside}")).await.0, StatusCode::OK);

    assert_eq!(get(&app, "/api/nothing").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn resampling_replaces_pending_items() {
    let dir = prepared(&["ingest", "filter"]);
    let app = cold_app(dir.path());
    let id = first_queued(&app).await;
    post(&app, "/api/labels", serde_json::to_string(&event(&id, "ann9")).unwrap()).await;

    let (status, body) = post(&app, "/api/sample", r#"{"n":5}"#).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"pending": 5, "total": 6}));
    let (_, queue) = get(&app, "/api/queue?limit=100").await;
    assert!(queue["items"].as_array().unwrap().iter().all(|i| i["article_id"] != id.as_str()));

    assert_eq!(post(&app, "/api/sample", r#"{"n":0}"#).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/sample", r#"{"n":-1}"#).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, "/api/sample", "{}").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stats_appear_once_written() {
    let dir = prepared(&["ingest", "filter"]);
    let app = cold_app(dir.path());
    assert_eq!(get(&app, "/api/stats").await.0, StatusCode::NOT_FOUND);
    std::fs::write(dir.path().join("out/stats.json"), r#"{"welch":{"f":1.5}}"#).unwrap();
    let (status, body) = get(&app, "/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["welch"]["f"], 1.5);
}

async fn wait_for_runs(app: &axum::Router, runs: u64) -> Value {
    for _ in 0..600 {
        let (_, status) = get(app, "/api/status").await;
        if status["training"]["runs_completed"] == runs && status["training"]["running"] == false {
            return status;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("training did not finish");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn second_retrain_conflicts_while_one_runs() {
    let dir = prepared(&["ingest", "filter"]);
    let (release, gate) = mpsc::channel::<()>();
    let gate = Mutex::new(gate);
    let trainer: Trainer = Arc::new(move |job, progress| {
        gate.lock().unwrap().recv()?;
        progress(newswatch_cli::service::Progress { epoch: 1, dev_f1: 0.0 });
        Ok(TrainingResult {
            detections: Vec::new(),
            metrics: json!({"labels": job.labels.len()}),
        })
    });
    let app = router(Arc::new(AppState::with_trainer(config(dir.path()), true, trainer).unwrap()));

    let (status, body) = post(&app, "/api/retrain", "").await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(body["started"], true);
    let (_, running) = get(&app, "/api/status").await;
    assert_eq!(running["training"]["running"], true);
    assert_eq!(post(&app, "/api/retrain", "").await.0, StatusCode::CONFLICT);

    release.send(()).unwrap();
    let done = wait_for_runs(&app, 1).await;
    assert_eq!(done["training"]["last_metrics"]["labels"], 150);
    assert_eq!(done["training"]["epoch"], 1);

    assert_eq!(post(&app, "/api/retrain", "").await.0, StatusCode::ACCEPTED);
    release.send(()).unwrap();
    wait_for_runs(&app, 2).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn trained_detector_scores_the_queue_and_retrains() {
    let dir = workspace();
    edit_config(dir.path(), |c| c["detector"]["epochs"] = 2.into());
    for command in ["ingest", "filter", "split", "train-detector"] {
        step(dir.path(), command);
    }
    let state = AppState::load(config(dir.path()), false).unwrap();
    let app = router(Arc::new(state));
    let (_, status) = get(&app, "/api/status").await;
    assert_eq!(status["cold"], false);
    assert_eq!(status["corpus"]["detections"], status["corpus"]["articles"]);

    let (_, queue) = get(&app, "/api/queue?limit=20").await;
    for item in queue["items"].as_array().unwrap() {
        let p = item["bag_probability"].as_f64().unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(!item["key_sentence_indices"].as_array().unwrap().is_empty());
    }

    assert_eq!(post(&app, "/api/retrain", "").await.0, StatusCode::ACCEPTED);
    let done = wait_for_runs(&app, 1).await;
    assert!(done["training"]["last_error"].is_null(), "{done}");
    assert_eq!(done["training"]["epoch"], 2);
    assert_eq!(done["training"]["total_epochs"], 2);
    assert!(dir.path().join("out/detections.jsonl").exists());
}
