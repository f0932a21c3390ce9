//! One function per subcommand. Each reads and writes files under the
//! configured paths and reports what it touched so the caller can record a
//! run manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use ndlearn::Checkpoint;
use newswatch::active::{sample_uncertain, LabelStore, SamplerConfig};
use newswatch::corpus::{
    gold_labels, ingest, keyword_filter, load_embeddings, split, tokenize, write_jsonl, AnnotationLabel, Article,
    CorpusSplit, EmbeddingTable, IngestOptions, KeywordSet, LabeledArticle, SplitIds,
};
use newswatch::dedup::{find_duplicates, incidents_from_predictions, IncidentRecord};
use newswatch::extractor::{
    build_input, evaluate_extraction, extraction_examples, train_multitask_with_progress, ExtractionResult,
    ExtractorModel,
};
use newswatch::mil::{self, DetectionResult, MilModel};
use newswatch::stats::{annotator_agreement, coverage_report, load_counts, AgreementField, CountTable};
use newswatch::tfidf::{evaluate_baseline, TfidfBaseline};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;

pub const ARTICLES: &str = "articles.jsonl";
pub const INGEST_ERRORS: &str = "ingest_errors.jsonl";
pub const FILTERED: &str = "filtered.jsonl";
pub const SPLIT: &str = "split.json";
pub const DETECTOR: &str = "detector.json";
pub const DETECTOR_HISTORY: &str = "detector_history.jsonl";
pub const DETECTOR_METRICS: &str = "detector_metrics.json";
pub const DETECTIONS: &str = "detections.jsonl";
pub const EXTRACTOR: &str = "extractor.json";
pub const EXTRACTOR_HISTORY: &str = "extractor_history.jsonl";
pub const EXTRACTOR_METRICS: &str = "extractor_metrics.json";
pub const EXTRACTIONS: &str = "extractions.jsonl";
pub const BASELINE: &str = "baseline.json";
pub const BASELINE_METRICS: &str = "baseline_metrics.json";
pub const QUEUE: &str = "queue.jsonl";
pub const INCIDENTS: &str = "incidents.jsonl";
pub const SKIPPED_INCIDENTS: &str = "skipped_incidents.jsonl";
pub const DEDUP: &str = "dedup.json";
pub const PREDICTED_COUNTS: &str = "predicted_counts.csv";
pub const STATS: &str = "stats.json";
pub const KAPPA: &str = "kappa.json";

/// Files a command read and wrote, plus a short summary for stdout.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn output_dir(config: &PipelineConfig) -> anyhow::Result<()> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Tokenized articles written by an earlier step.
pub fn read_articles(path: &Path) -> anyhow::Result<Vec<Article>> {
    let report = ingest(path, IngestOptions { strict: true })?;
    if let Some(a) = report.articles.iter().find(|a| !a.is_tokenized()) {
        bail!("article `{}` in {} is not tokenized; run `ingest` first", a.id, path.display());
    }
    Ok(report.articles)
}

/// Word vectors for every token the models will see in `articles`.
pub fn embedding_table(config: &PipelineConfig, articles: &[Article]) -> anyhow::Result<EmbeddingTable> {
    let vocab: BTreeSet<&str> = articles
        .iter()
        .flat_map(|a| a.model_sentences().flatten().map(String::as_str))
        .collect();
    Ok(load_embeddings(
        config.paths.embeddings.as_deref(),
        vocab,
        config.detector.embedding_dim,
        config.seed,
    )?)
}

fn embedding_inputs(config: &PipelineConfig) -> Vec<PathBuf> {
    config.paths.embeddings.iter().cloned().collect()
}

pub fn gold(config: &PipelineConfig) -> anyhow::Result<BTreeMap<String, AnnotationLabel>> {
    Ok(gold_labels(LabelStore::load(&config.paths.labels)?.current().as_slice()))
}

/// Rebuilds the split recorded in `split.json` against the current corpus.
fn load_split(config: &PipelineConfig, articles: &[Article]) -> anyhow::Result<CorpusSplit> {
    let path = config.output(SPLIT);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let ids: SplitIds = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let by_id: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let gold = gold(config)?;
    let part = |ids: &[String]| -> anyhow::Result<Vec<LabeledArticle>> {
        ids.iter()
            .map(|id| {
                let article = by_id.get(id.as_str()).with_context(|| format!("split article `{id}` not in the corpus"))?;
                let label = gold.get(id).with_context(|| format!("split article `{id}` has no label"))?;
                Ok(LabeledArticle {
                    article: (*article).clone(),
                    label: label.clone(),
                })
            })
            .collect()
    };
    Ok(CorpusSplit {
        train: part(&ids.train)?,
        dev: part(&ids.dev)?,
        test: part(&ids.test)?,
        seed: ids.seed,
    })
}

pub fn run_ingest(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let report = ingest(&config.paths.articles, IngestOptions::default())?;
    for e in &report.errors {
        tracing::warn!(line = e.line, message = %e.message, "skipped malformed article");
    }
    let articles = report.articles.iter().map(tokenize).collect::<Result<Vec<_>, _>>()?;
    let (out, errors) = (config.output(ARTICLES), config.output(INGEST_ERRORS));
    write_jsonl(&out, &articles)?;
    write_jsonl(&errors, &report.errors)?;
    Ok(Outcome {
        inputs: vec![config.paths.articles.clone()],
        outputs: vec![out, errors],
        summary: json!({"articles": articles.len(), "malformed": report.errors.len()}),
    })
}

pub fn run_filter(config: &PipelineConfig, keywords: Option<&str>) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let set = KeywordSet::preset(keywords.unwrap_or(&config.keywords))?;
    let input = config.output(ARTICLES);
    let articles = read_articles(&input)?;
    let kept = keyword_filter(&articles, &set)?;
    let out = config.output(FILTERED);
    write_jsonl(&out, &kept)?;
    Ok(Outcome {
        inputs: vec![input],
        outputs: vec![out],
        summary: json!({"retained": kept.len(), "total": articles.len()}),
    })
}

pub fn run_split(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let input = config.output(FILTERED);
    let articles = read_articles(&input)?;
    let gold = gold(config)?;
    let labeled: Vec<LabeledArticle> = articles
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
    let ids = parts.ids();
    let out = config.output(SPLIT);
    write_json(&out, &ids)?;
    Ok(Outcome {
        inputs: vec![input, config.paths.labels.clone()],
        outputs: vec![out],
        summary: json!({"train": ids.train.len(), "dev": ids.dev.len(), "test": ids.test.len()}),
    })
}

/// Everything the detector needs, loaded from the filtered corpus.
pub struct DetectorData {
    pub articles: Vec<Article>,
    pub split: CorpusSplit,
    pub embeddings: EmbeddingTable,
}

fn detector_data(config: &PipelineConfig) -> anyhow::Result<DetectorData> {
    let articles = read_articles(&config.output(FILTERED))?;
    let split = load_split(config, &articles)?;
    let embeddings = embedding_table(config, &articles)?;
    Ok(DetectorData {
        articles,
        split,
        embeddings,
    })
}

pub fn run_train_detector(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let data = detector_data(config)?;
    let outcome = mil::train_with_progress(&data.split, &data.embeddings, &config.detector, |s| {
        tracing::info!(
            epoch = s.epoch,
            train_loss = s.train_loss,
            dev_loss = s.dev_loss,
            dev_f1 = s.dev_f1,
            "detector epoch"
        );
    })?;
    let (model, history) = (config.output(DETECTOR), config.output(DETECTOR_HISTORY));
    outcome.model.to_checkpoint()?.save(&model)?;
    write_jsonl(&history, &outcome.history)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    let mut inputs = vec![config.output(FILTERED), config.output(SPLIT), config.paths.labels.clone()];
    inputs.extend(embedding_inputs(config));
    Ok(Outcome {
        inputs,
        outputs: vec![model, history],
        summary: json!({"best_epoch": outcome.best_epoch, "dev_f1": best.dev_f1, "train_f1": best.train_f1}),
    })
}

fn load_detector(config: &PipelineConfig) -> anyhow::Result<MilModel> {
    let path = config.output(DETECTOR);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(MilModel::from_checkpoint(&ckpt)?)
}

fn load_extractor(config: &PipelineConfig) -> anyhow::Result<ExtractorModel> {
    let path = config.output(EXTRACTOR);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ExtractorModel::from_checkpoint(&ckpt)?)
}

fn positives(items: &[LabeledArticle]) -> Vec<LabeledArticle> {
    items.iter().filter(|l| l.label.is_event).cloned().collect()
}

/// Detections keyed by article id for the given labeled articles.
fn detect_labeled(items: &[LabeledArticle], model: &MilModel, emb: &EmbeddingTable) -> anyhow::Result<HashMap<String, DetectionResult>> {
    let articles: Vec<Article> = items.iter().map(|l| l.article.clone()).collect();
    Ok(mil::predict(&articles, model, emb)?
        .into_iter()
        .map(|d| (d.article_id.clone(), d))
        .collect())
}

pub fn run_train_extractor(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let data = detector_data(config)?;
    let detector = load_detector(config)?;
    let train_pos = positives(&data.split.train);
    let dev_pos = positives(&data.split.dev);
    let train = extraction_examples(&train_pos, &detect_labeled(&train_pos, &detector, &data.embeddings)?)?;
    let dev = extraction_examples(&dev_pos, &detect_labeled(&dev_pos, &detector, &data.embeddings)?)?;
    let outcome = train_multitask_with_progress(&train, &dev, &data.embeddings, &config.extractor, |s| {
        tracing::info!(
            epoch = s.epoch,
            train_loss = s.train_loss,
            dev_loss = s.dev_loss,
            "extractor epoch"
        );
    })?;
    let (model, history) = (config.output(EXTRACTOR), config.output(EXTRACTOR_HISTORY));
    outcome.model.to_checkpoint()?.save(&model)?;
    write_jsonl(&history, &outcome.history)?;
    let mut inputs = vec![
        config.output(FILTERED),
        config.output(SPLIT),
        config.output(DETECTOR),
        config.paths.labels.clone(),
    ];
    inputs.extend(embedding_inputs(config));
    Ok(Outcome {
        inputs,
        outputs: vec![model, history],
        summary: json!({
            "best_epoch": outcome.best_epoch,
            "train_examples": train.len(),
            "dev_examples": dev.len(),
            "missing_classes": outcome.missing_classes,
        }),
    })
}

pub fn run_train_baseline(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let articles = read_articles(&config.output(FILTERED))?;
    let split = load_split(config, &articles)?;
    let unzip = |items: &[LabeledArticle]| -> (Vec<Article>, Vec<bool>) {
        items.iter().map(|l| (l.article.clone(), l.label.is_event)).unzip()
    };
    let (train_docs, train_y) = unzip(&split.train);
    let (test_docs, test_y) = unzip(&split.test);
    let baseline = TfidfBaseline::fit(&train_docs, &train_y, &config.baseline)?;
    let test = evaluate_baseline(&baseline, &test_docs, &test_y)?;
    let (model, metrics) = (config.output(BASELINE), config.output(BASELINE_METRICS));
    baseline.to_checkpoint()?.save(&model)?;
    write_json(
        &metrics,
        &json!({
            "test": test,
            "iterations": baseline.model.iterations,
            "gradient_norm": baseline.model.gradient_norm,
        }),
    )?;
    Ok(Outcome {
        inputs: vec![config.output(FILTERED), config.output(SPLIT), config.paths.labels.clone()],
        outputs: vec![model, metrics],
        summary: json!({"test_f1": test.f1}),
    })
}

pub fn run_predict(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let data = detector_data(config)?;
    let model = load_detector(config)?;
    let detections = mil::predict(&data.articles, &model, &data.embeddings)?;
    let by_id: HashMap<String, DetectionResult> = detections.iter().map(|d| (d.article_id.clone(), d.clone())).collect();
    let test: Vec<DetectionResult> = data.split.test.iter().map(|l| by_id[&l.article.id].clone()).collect();
    let test_gold: HashMap<String, bool> = data
        .split
        .test
        .iter()
        .map(|l| (l.article.id.clone(), l.label.is_event))
        .collect();
    let metrics = mil::evaluate(&test, &test_gold)?;
    let (out, metrics_path) = (config.output(DETECTIONS), config.output(DETECTOR_METRICS));
    write_jsonl(&out, &detections)?;
    write_json(&metrics_path, &json!({"test": metrics}))?;
    let positive = detections.iter().filter(|d| d.predicted).count();
    let mut inputs = vec![
        config.output(FILTERED),
        config.output(SPLIT),
        config.output(DETECTOR),
        config.paths.labels.clone(),
    ];
    inputs.extend(embedding_inputs(config));
    Ok(Outcome {
        inputs,
        outputs: vec![out, metrics_path],
        summary: json!({"articles": detections.len(), "predicted_positive": positive, "test_f1": metrics.f1}),
    })
}

pub fn run_extract(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let data = detector_data(config)?;
    let model = load_extractor(config)?;
    let detections: Vec<DetectionResult> = read_jsonl(&config.output(DETECTIONS))?;
    let by_id: HashMap<&str, &DetectionResult> = detections.iter().map(|d| (d.article_id.as_str(), d)).collect();
    let articles: HashMap<&str, &Article> = data.articles.iter().map(|a| (a.id.as_str(), a)).collect();

    let extract = |id: &str| -> anyhow::Result<ExtractionResult> {
        let article = articles.get(id).with_context(|| format!("detection for unknown article `{id}`"))?;
        let detection = by_id.get(id).with_context(|| format!("no detection for `{id}`"))?;
        let tokens = build_input(article, detection)?;
        Ok(model.extract(id, &tokens, &data.embeddings)?)
    };
    let extractions = detections
        .iter()
        .filter(|d| d.predicted)
        .map(|d| extract(&d.article_id))
        .collect::<anyhow::Result<Vec<_>>>()?;

    // held-out quality on gold positives, whatever the detector said
    let test_pos = positives(&data.split.test);
    let mut results = Vec::new();
    let mut gold = HashMap::new();
    for l in &test_pos {
        if let (Some(t), Some(a)) = (l.label.target, l.label.action) {
            results.push(extract(&l.article.id)?);
            gold.insert(l.article.id.clone(), (t, a));
        }
    }
    let metrics = if results.is_empty() {
        tracing::warn!("test split has no labeled positives; extractor metrics omitted");
        serde_json::Value::Null
    } else {
        serde_json::to_value(evaluate_extraction(&results, &gold)?)?
    };

    let (out, metrics_path) = (config.output(EXTRACTIONS), config.output(EXTRACTOR_METRICS));
    write_jsonl(&out, &extractions)?;
    write_json(&metrics_path, &json!({"test": metrics, "test_positives": results.len()}))?;
    let mut inputs = vec![
        config.output(FILTERED),
        config.output(SPLIT),
        config.output(DETECTIONS),
        config.output(EXTRACTOR),
        config.paths.labels.clone(),
    ];
    inputs.extend(embedding_inputs(config));
    Ok(Outcome {
        inputs,
        outputs: vec![out, metrics_path],
        summary: json!({"extracted": extractions.len()}),
    })
}

/// Unlabeled articles with their detector probabilities, in corpus order.
pub fn unlabeled_pool(articles: &[Article], probabilities: &HashMap<String, f64>, labeled: &BTreeSet<String>) -> Vec<(String, f64)> {
    articles
        .iter()
        .filter(|a| !labeled.contains(&a.id))
        .map(|a| (a.id.clone(), probabilities.get(&a.id).copied().unwrap_or(0.5)))
        .collect()
}

/// Samples at most `n` articles; a smaller pool is drawn in full.
pub fn sample_queue(pool: &[(String, f64)], sampler: &SamplerConfig, n: usize) -> anyhow::Result<newswatch::active::AnnotationQueue> {
    let n = if n > pool.len() {
        tracing::warn!(requested = n, available = pool.len(), "pool smaller than requested sample");
        pool.len()
    } else {
        n
    };
    let cfg = SamplerConfig {
        n_samples: n,
        ..sampler.clone()
    };
    Ok(sample_uncertain(pool, &cfg)?)
}

pub fn run_al_sample(config: &PipelineConfig, n: Option<usize>) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let articles = read_articles(&config.output(FILTERED))?;
    let detections: Vec<DetectionResult> = read_jsonl(&config.output(DETECTIONS))?;
    let probabilities: HashMap<String, f64> = detections.iter().map(|d| (d.article_id.clone(), d.bag_probability)).collect();
    let labeled: BTreeSet<String> = LabelStore::load(&config.paths.labels)?
        .records()
        .iter()
        .map(|l| l.article_id.clone())
        .collect();
    let pool = unlabeled_pool(&articles, &probabilities, &labeled);
    let queue = sample_queue(&pool, &config.sampler, n.unwrap_or(config.sampler.n_samples))?;
    let out = config.output(QUEUE);
    std::fs::write(&out, queue.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    Ok(Outcome {
        inputs: vec![config.output(FILTERED), config.output(DETECTIONS), config.paths.labels.clone()],
        outputs: vec![out],
        summary: json!({"pool": pool.len(), "queued": queue.len()}),
    })
}

pub fn run_dedupe(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let articles = read_articles(&config.output(FILTERED))?;
    let detections: Vec<DetectionResult> = read_jsonl(&config.output(DETECTIONS))?;
    let extractions: Vec<ExtractionResult> = read_jsonl(&config.output(EXTRACTIONS))?;
    let (records, skipped) = incidents_from_predictions(&detections, &extractions, &articles)?;
    let report = find_duplicates(&records)?;

    let primary = &config.stats.crime_types[0];
    let mut counts = CountTable::from_clusters(&records, &report, primary)?;
    let mut inputs = vec![config.output(FILTERED), config.output(DETECTIONS), config.output(EXTRACTIONS)];
    if let Some(path) = &config.paths.predicted_counts {
        merge_other_counts(&mut counts, &load_counts(path)?, primary);
        inputs.push(path.clone());
    }

    let outputs = [INCIDENTS, SKIPPED_INCIDENTS, DEDUP, PREDICTED_COUNTS].map(|n| config.output(n));
    write_jsonl(&outputs[0], &records)?;
    write_jsonl(&outputs[1], &skipped)?;
    write_json(&outputs[2], &report)?;
    std::fs::write(&outputs[3], counts.to_csv()).with_context(|| format!("writing {}", outputs[3].display()))?;
    Ok(Outcome {
        inputs,
        outputs: outputs.to_vec(),
        summary: json!({"incidents": records.len(), "unique": report.unique_count, "skipped": skipped.len()}),
    })
}

/// Copies every crime type except `primary` from `other` into `counts`.
fn merge_other_counts(counts: &mut CountTable, other: &CountTable, primary: &str) {
    for crime in other.crime_types() {
        if crime == newswatch::dedup::normalize_place(primary) {
            tracing::warn!(crime_type = %crime, "ignoring supplied counts for the extracted crime type");
            continue;
        }
        for ((city, state), n) in other.for_crime(&crime) {
            counts.add(&city, &state, &crime, n);
        }
    }
}

pub fn run_stats(config: &PipelineConfig) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let official_path = config
        .paths
        .official_counts
        .clone()
        .context("paths.official_counts is required for `stats`")?;
    let predicted_path = config.output(PREDICTED_COUNTS);
    let predicted = load_counts(&predicted_path)?;
    let official = load_counts(&official_path)?;
    let crime_types: Vec<&str> = config.stats.crime_types.iter().map(String::as_str).collect();
    let report = coverage_report(&predicted, &official, &crime_types)?;
    let out = config.output(STATS);
    write_json(&out, &report)?;
    Ok(Outcome {
        inputs: vec![predicted_path, official_path],
        outputs: vec![out],
        summary: json!({
            "cities": report.per_crime_ratios.first().map_or(0, |s| s.cities.len()),
            "F": report.welch.f,
            "p": report.welch.p,
        }),
    })
}

/// The first two annotator ids, in order of first appearance.
fn default_annotators(labels: &[AnnotationLabel]) -> anyhow::Result<(String, String)> {
    let mut seen: Vec<&str> = Vec::new();
    for l in labels {
        if !seen.contains(&l.annotator_id.as_str()) {
            seen.push(&l.annotator_id);
        }
    }
    match seen.as_slice() {
        [a, b, ..] => Ok((a.to_string(), b.to_string())),
        _ => bail!("kappa needs labels from two annotators, found {}", seen.len()),
    }
}

pub fn run_kappa(config: &PipelineConfig, annotators: Option<(String, String)>) -> anyhow::Result<Outcome> {
    output_dir(config)?;
    let labels = LabelStore::load(&config.paths.labels)?.current();
    let (a, b) = match annotators {
        Some(pair) => pair,
        None => default_annotators(&labels)?,
    };
    let is_event = annotator_agreement(&labels, &a, &b, AgreementField::IsEvent)?;
    let mut fields = vec![is_event];
    for field in [AgreementField::Target, AgreementField::Action] {
        match annotator_agreement(&labels, &a, &b, field) {
            Ok(r) => fields.push(r),
            Err(e) => tracing::warn!(?field, error = %e, "agreement not computed"),
        }
    }
    let out = config.output(KAPPA);
    write_json(&out, &fields)?;
    Ok(Outcome {
        inputs: vec![config.paths.labels.clone()],
        outputs: vec![out],
        summary: json!({"annotators": [a, b], "is_event_kappa": fields[0].kappa, "pairs": fields[0].pairs}),
    })
}

/// Incident records as written by `dedupe`.
pub fn read_incidents(config: &PipelineConfig) -> anyhow::Result<Vec<IncidentRecord>> {
    read_jsonl(&config.output(INCIDENTS))
}
