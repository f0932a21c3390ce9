//! HTTP service behind the annotation UI. Handlers run concurrently; queue
//! and label-store mutations go through one lock, and at most one training
//! run is active at a time on a blocking worker.

use std::collections::{BTreeSet, HashMap};
use std::io::Write as _;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use anyhow::Context as _;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndlearn::Checkpoint;
use newswatch::active::{AnnotationQueue, LabelStore, QueueStatus};
use newswatch::corpus::{gold_labels, split, write_jsonl, AnnotationLabel, Article, LabeledArticle};
use newswatch::extractor::ExtractionResult;
use newswatch::mil::{self, DetectionResult, MilModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::{
    embedding_table, read_articles, read_jsonl, sample_queue, unlabeled_pool, DETECTIONS, DETECTOR, DETECTOR_HISTORY,
    EXTRACTIONS, FILTERED, QUEUE, STATS,
};
use crate::config::PipelineConfig;

const DEFAULT_QUEUE_LIMIT: usize = 10;

/// Input to a retraining run: the corpus and a snapshot of the labels.
pub struct TrainingJob {
    pub config: PipelineConfig,
    pub articles: Arc<Vec<Article>>,
    pub labels: Vec<AnnotationLabel>,
}

pub struct TrainingResult {
    pub detections: Vec<DetectionResult>,
    pub metrics: Value,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Progress {
    pub epoch: usize,
    pub dev_f1: f64,
}

pub type Trainer = Arc<dyn Fn(TrainingJob, &dyn Fn(Progress)) -> anyhow::Result<TrainingResult> + Send + Sync>;

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainingStatus {
    pub running: bool,
    pub epoch: usize,
    pub total_epochs: usize,
    pub runs_completed: usize,
    pub last_error: Option<String>,
    pub last_metrics: Option<Value>,
}

struct Inner {
    queue: AnnotationQueue,
    store: LabelStore,
    detections: HashMap<String, DetectionResult>,
    extractions: HashMap<String, ExtractionResult>,
    sample_round: u64,
}

pub struct AppState {
    config: PipelineConfig,
    cold: bool,
    articles: Arc<Vec<Article>>,
    index: HashMap<String, usize>,
    inner: Mutex<Inner>,
    training: Mutex<TrainingStatus>,
    trainer: Trainer,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    /// Loads the filtered corpus, label store, detections and queue from
    /// the output directory. Without `cold`, detections come from
    /// `detections.jsonl` or, failing that, from the trained detector; in
    /// cold mode every article gets probability 0.5.
    pub fn load(config: PipelineConfig, cold: bool) -> anyhow::Result<Self> {
        Self::with_trainer(config, cold, Arc::new(train_detector))
    }

    pub fn with_trainer(config: PipelineConfig, cold: bool, trainer: Trainer) -> anyhow::Result<Self> {
        let articles = read_articles(&config.output(FILTERED))?;
        let store = LabelStore::load(&config.paths.labels)?;
        let detections: Vec<DetectionResult> = if cold {
            Vec::new()
        } else if config.output(DETECTIONS).exists() {
            read_jsonl(&config.output(DETECTIONS))?
        } else {
            let path = config.output(DETECTOR);
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {} (use --cold to serve without a model)", path.display()))?;
            let model = MilModel::from_checkpoint(&ckpt)?;
            mil::predict(&articles, &model, &embedding_table(&config, &articles)?)?
        };
        let extractions: Vec<ExtractionResult> = if !cold && config.output(EXTRACTIONS).exists() {
            read_jsonl(&config.output(EXTRACTIONS))?
        } else {
            Vec::new()
        };
        let index: HashMap<String, usize> = articles.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();

        let mut inner = Inner {
            queue: AnnotationQueue::default(),
            store,
            detections: detections.into_iter().map(|d| (d.article_id.clone(), d)).collect(),
            extractions: extractions.into_iter().map(|e| (e.article_id.clone(), e)).collect(),
            sample_round: 0,
        };
        let queue_path = config.output(QUEUE);
        inner.queue = if queue_path.exists() {
            let text = std::fs::read_to_string(&queue_path).with_context(|| format!("reading {}", queue_path.display()))?;
            let queue = AnnotationQueue::from_jsonl(&text)?;
            if let Some(item) = queue.items().iter().find(|i| !index.contains_key(&i.article_id)) {
                anyhow::bail!("queued article `{}` is not in the filtered corpus", item.article_id);
            }
            queue
        } else {
            resample(&config, &articles, &inner, config.sampler.n_samples)?
        };
        std::fs::create_dir_all(&config.paths.output_dir)?;
        Ok(Self {
            config,
            cold,
            articles: Arc::new(articles),
            index,
            inner: Mutex::new(inner),
            training: Mutex::new(TrainingStatus::default()),
            trainer,
        })
    }

    fn article(&self, id: &str) -> Option<&Article> {
        self.index.get(id).map(|&i| &self.articles[i])
    }

    fn save_queue(&self, queue: &AnnotationQueue) -> Result<(), ApiError> {
        let path = self.config.output(QUEUE);
        std::fs::write(&path, queue.to_jsonl()).map_err(|e| ApiError::internal(format!("writing {}: {e}", path.display())))
    }

    /// Appends one record to the label file and syncs it before returning.
    fn append_label(&self, label: &AnnotationLabel) -> Result<(), ApiError> {
        let path = &self.config.paths.labels;
        let line = serde_json::to_string(label).map_err(|e| ApiError::internal(e.to_string()))? + "\n";
        let write = || -> std::io::Result<()> {
            let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            file.write_all(line.as_bytes())?;
            file.sync_data()
        };
        write().map_err(|e| ApiError::internal(format!("appending to {}: {e}", path.display())))
    }
}

/// Pending items replaced by a fresh draw of `n` unlabeled articles;
/// labeled and skipped items are kept.
fn resample(config: &PipelineConfig, articles: &[Article], inner: &Inner, n: usize) -> anyhow::Result<AnnotationQueue> {
    let kept: Vec<_> = inner
        .queue
        .items()
        .iter()
        .filter(|i| i.status != QueueStatus::Pending)
        .cloned()
        .collect();
    let mut excluded: BTreeSet<String> = inner.store.records().iter().map(|l| l.article_id.clone()).collect();
    excluded.extend(kept.iter().map(|i| i.article_id.clone()));
    let probabilities: HashMap<String, f64> = inner
        .detections
        .iter()
        .map(|(id, d)| (id.clone(), d.bag_probability))
        .collect();
    let pool = unlabeled_pool(articles, &probabilities, &excluded);
    let mut sampler = config.sampler.clone();
    sampler.seed = sampler.seed.wrapping_add(inner.sample_round);
    let fresh = sample_queue(&pool, &sampler, n)?;
    let mut queue = AnnotationQueue::from_items(kept)?;
    queue.extend(fresh);
    Ok(queue)
}

/// Retrains the detector on every labeled article, saves it, and scores
/// the whole corpus with it.
pub fn train_detector(job: TrainingJob, progress: &dyn Fn(Progress)) -> anyhow::Result<TrainingResult> {
    let config = &job.config;
    let gold = gold_labels(&job.labels);
    let labeled: Vec<LabeledArticle> = job
        .articles
        .iter()
        .filter_map(|a| {
            gold.get(&a.id).map(|l| LabeledArticle {
                article: a.clone(),
                label: l.clone(),
            })
        })
        .collect();
    let r = &config.split;
    let parts = split(labeled, (r.train, r.dev, r.test), config.seed)?;
    let embeddings = embedding_table(config, &job.articles)?;
    let outcome = mil::train_with_progress(&parts, &embeddings, &config.detector, |s| {
        progress(Progress {
            epoch: s.epoch,
            dev_f1: s.dev_f1,
        })
    })?;
    outcome.model.to_checkpoint()?.save(config.output(DETECTOR))?;
    write_jsonl(config.output(DETECTOR_HISTORY), &outcome.history)?;
    let detections = mil::predict(&job.articles, &outcome.model, &embeddings)?;
    write_jsonl(config.output(DETECTIONS), &detections)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    Ok(TrainingResult {
        detections,
        metrics: json!({
            "best_epoch": outcome.best_epoch,
            "train_f1": best.train_f1,
            "dev_f1": best.dev_f1,
            "labeled": job.labels.len(),
        }),
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        let message = message.into();
        tracing::error!(%message, "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/articles/{id}", get(article))
        .route("/api/labels", post(labels))
        .route("/api/sample", post(sample))
        .route("/api/retrain", post(retrain))
        .route("/api/status", get(status))
        .route("/api/stats", get(stats))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueueParams {
    limit: Option<usize>,
    annotator_id: Option<String>,
}

async fn queue(State(state): State<Shared>, params: Result<Query<QueueParams>, QueryRejection>) -> Result<Json<Value>, ApiError> {
    let Query(params) = params?;
    let limit = params.limit.unwrap_or(DEFAULT_QUEUE_LIMIT);
    let inner = lock(&state.inner);
    let done: BTreeSet<&str> = match &params.annotator_id {
        Some(who) => inner
            .store
            .records()
            .iter()
            .filter(|l| &l.annotator_id == who)
            .map(|l| l.article_id.as_str())
            .collect(),
        None => BTreeSet::new(),
    };
    let items: Vec<Value> = inner
        .queue
        .pending(usize::MAX)
        .into_iter()
        .filter(|i| !done.contains(i.article_id.as_str()))
        .take(limit)
        .map(|item| {
            let article = state.article(&item.article_id).expect("queued articles are in the corpus");
            let detection = inner.detections.get(&item.article_id);
            json!({
                "article_id": item.article_id,
                "title": article.title,
                "body": article.body,
                "sentences": article.sentences,
                "bag_probability": item.bag_probability,
                "sample_weight": item.sample_weight,
                "key_sentence_indices": detection.map(|d| d.key_sentence_indices.clone()).unwrap_or_default(),
            })
        })
        .collect();
    Ok(Json(json!({
        "items": items,
        "pending": inner.queue.count(QueueStatus::Pending),
    })))
}

async fn article(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let article = state
        .article(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown article `{id}`")))?;
    let inner = lock(&state.inner);
    let labels: Vec<&AnnotationLabel> = inner.store.records().iter().filter(|l| l.article_id == id).collect();
    Ok(Json(json!({
        "article": article,
        "detection": inner.detections.get(&id),
        "extraction": inner.extractions.get(&id),
        "queue": inner.queue.get(&id),
        "labels": labels,
    })))
}

async fn labels(State(state): State<Shared>, body: Result<Json<AnnotationLabel>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(label) = body?;
    label.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    if state.article(&label.article_id).is_none() {
        return Err(ApiError::not_found(format!("unknown article `{}`", label.article_id)));
    }
    let mut guard = lock(&state.inner);
    let inner = &mut *guard;
    if !inner.queue.contains(&label.article_id) {
        return Err(ApiError::not_found(format!("article `{}` is not in the queue", label.article_id)));
    }
    let appended = inner.store.latest(&label.article_id, &label.annotator_id) != Some(&label);
    if appended {
        // durable before acknowledged
        state.append_label(&label)?;
    }
    newswatch::active::merge_labels(&mut inner.queue, &mut inner.store, std::slice::from_ref(&label))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    state.save_queue(&inner.queue)?;
    tracing::info!(article_id = %label.article_id, annotator_id = %label.annotator_id, appended, "label received");
    Ok((StatusCode::CREATED, Json(json!({"appended": appended, "label": label}))).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    n: usize,
}

async fn sample(State(state): State<Shared>, body: Result<Json<SampleRequest>, JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(req) = body?;
    if req.n == 0 {
        return Err(ApiError::bad_request("n must be positive"));
    }
    let mut inner = lock(&state.inner);
    inner.sample_round += 1;
    let queue = resample(&state.config, &state.articles, &inner, req.n).map_err(|e| ApiError::bad_request(e.to_string()))?;
    state.save_queue(&queue)?;
    inner.queue = queue;
    Ok(Json(json!({
        "pending": inner.queue.count(QueueStatus::Pending),
        "total": inner.queue.len(),
    })))
}

async fn retrain(State(state): State<Shared>) -> Result<Response, ApiError> {
    {
        let mut training = lock(&state.training);
        if training.running {
            return Err(ApiError::new(StatusCode::CONFLICT, "a training run is already in progress"));
        }
        training.running = true;
        training.epoch = 0;
        training.total_epochs = state.config.detector.epochs;
        training.last_error = None;
    }
    let job = TrainingJob {
        config: state.config.clone(),
        articles: Arc::clone(&state.articles),
        labels: lock(&state.inner).store.current(),
    };
    let worker = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let progress = |p: Progress| {
            lock(&worker.training).epoch = p.epoch;
            tracing::info!(epoch = p.epoch, dev_f1 = p.dev_f1, "retrain progress");
        };
        let result = (worker.trainer)(job, &progress);
        let mut training = lock(&worker.training);
        match result {
            Ok(done) => {
                lock(&worker.inner).detections = done.detections.into_iter().map(|d| (d.article_id.clone(), d)).collect();
                training.last_metrics = Some(done.metrics);
                training.runs_completed += 1;
            }
            Err(e) => {
                tracing::error!(error = %format!("{e:#}"), "retrain failed");
                training.last_error = Some(format!("{e:#}"));
            }
        }
        training.running = false;
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"started": true}))).into_response())
}

async fn status(State(state): State<Shared>) -> Json<Value> {
    let training = lock(&state.training).clone();
    let inner = lock(&state.inner);
    let labeled: BTreeSet<&str> = inner.store.records().iter().map(|l| l.article_id.as_str()).collect();
    Json(json!({
        "cold": state.cold,
        "training": training,
        "corpus": {
            "articles": state.articles.len(),
            "labels": inner.store.records().len(),
            "labeled_articles": labeled.len(),
            "detections": inner.detections.len(),
        },
        "queue": {
            "pending": inner.queue.count(QueueStatus::Pending),
            "labeled": inner.queue.count(QueueStatus::Labeled),
            "skipped": inner.queue.count(QueueStatus::Skipped),
        },
    }))
}

async fn stats(State(state): State<Shared>) -> Result<Json<Value>, ApiError> {
    let path = state.config.output(STATS);
    let text = match std::fs::read_to_string(&path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ApiError::not_found("no stats report yet; run `stats` first"));
        }
        Err(e) => return Err(ApiError::internal(format!("reading {}: {e}", path.display()))),
    };
    let report: Value = serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("parsing {}: {e}", path.display())))?;
    Ok(Json(report))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
