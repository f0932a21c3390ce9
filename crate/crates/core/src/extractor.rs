//! Event extraction: target group and action type of a detected incident.
//!
//! The two highest-scoring sentences of an article, kept in document order,
//! are concatenated and read by a bidirectional LSTM. Two softmax heads over
//! the summary vector predict the target group and the action type.

use std::collections::HashMap;

use ndlearn::{dropout_node, Activation, Adam, AdamConfig, BiLstm, Checkpoint, Dense, Graph, NodeId, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ActionClass, Article, EmbeddingTable, LabeledArticle, TargetClass, MAX_TOKENS_PER_SENTENCE};
use crate::error::{Error, Result};
use crate::metrics::{macro_metrics, MacroMetrics};
use crate::mil::{top_k_indices, DetectionResult};

/// Number of key sentences fed to the extractor.
pub const INPUT_SENTENCES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 50,
            dropout: 0.25,
            learning_rate: 8e-5,
            batch_size: 5,
            epochs: 50,
            embedding_dim: 300,
            seed: 0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.embedding_dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("dimensions and batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub article_id: String,
    pub target_distribution: Vec<f64>,
    pub action_distribution: Vec<f64>,
    pub target: TargetClass,
    pub action: ActionClass,
}

/// One training or evaluation input: the extractor tokens of a positive
/// article and its gold classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionExample {
    pub article_id: String,
    pub tokens: Vec<String>,
    pub target: TargetClass,
    pub action: ActionClass,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Tokens of the two highest-scoring sentences, concatenated in document
/// order.
pub fn build_input(article: &Article, detection: &DetectionResult) -> Result<Vec<String>> {
    let sentences: Vec<&[String]> = article.model_sentences().collect();
    if sentences.is_empty() {
        return Err(Error::Untokenized(article.id.clone()));
    }
    if detection.sentence_scores.len() != sentences.len() {
        return Err(Error::InvalidInput(format!(
            "article {} has {} model sentences but {} scores",
            article.id,
            sentences.len(),
            detection.sentence_scores.len()
        )));
    }
    let mut picked = top_k_indices(&detection.sentence_scores, INPUT_SENTENCES);
    picked.sort_unstable();
    Ok(picked.iter().flat_map(|&i| sentences[i].iter().cloned()).collect())
}

/// Pairs each labeled positive with its extractor input.
pub fn extraction_examples(
    positives: &[LabeledArticle],
    detections: &HashMap<String, DetectionResult>,
) -> Result<Vec<ExtractionExample>> {
    positives
        .iter()
        .map(|l| {
            let (Some(target), Some(action)) = (l.label.target, l.label.action) else {
                return Err(Error::InvalidLabel {
                    id: l.label.article_id.clone(),
                    message: "positive example lacks a target or action".into(),
                });
            };
            let detection = detections
                .get(&l.article.id)
                .ok_or_else(|| Error::UnknownArticle(l.article.id.clone()))?;
            Ok(ExtractionExample {
                article_id: l.article.id.clone(),
                tokens: build_input(&l.article, detection)?,
                target,
                action,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExtractorModel {
    pub config: ExtractorConfig,
    pub params: ParamStore,
    encoder: BiLstm,
    target_head: Dense,
    action_head: Dense,
}

impl ExtractorModel {
    /// Encoder weights are random; both heads start at zero, so untrained
    /// distributions are uniform.
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = BiLstm::new(&mut params, "extract", config.embedding_dim, config.hidden_dim, &mut rng)?;
        let target_head = Dense::zeros(&mut params, "target", encoder.output_dim(), TargetClass::ALL.len())?;
        let action_head = Dense::zeros(&mut params, "action", encoder.output_dim(), ActionClass::ALL.len())?;
        Ok(Self {
            config,
            params,
            encoder,
            target_head,
            action_head,
        })
    }

    /// Logit nodes of both heads.
    fn heads(
        &self,
        graph: &mut Graph,
        params: &ParamStore,
        tokens: &[String],
        embeddings: &EmbeddingTable,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(NodeId, NodeId)> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty extractor input".into()));
        }
        if embeddings.dim() != self.config.embedding_dim {
            return Err(Error::InvalidInput(format!(
                "embedding table has dimension {}, model expects {}",
                embeddings.dim(),
                self.config.embedding_dim
            )));
        }
        let tokens = &tokens[..tokens.len().min(INPUT_SENTENCES * MAX_TOKENS_PER_SENTENCE)];
        let x = graph.constant(Tensor::matrix(tokens.len(), embeddings.dim(), embeddings.embed(tokens))?);
        let enc = self.encoder.forward(graph, params, x)?;
        let h = dropout_node(graph, enc.summary, self.config.dropout, rng)?;
        let target = self.target_head.forward(graph, params, h, Activation::Identity)?;
        let action = self.action_head.forward(graph, params, h, Activation::Identity)?;
        Ok((target, action))
    }

    pub fn extract(&self, article_id: &str, tokens: &[String], embeddings: &EmbeddingTable) -> Result<ExtractionResult> {
        let mut graph = Graph::new();
        let (t, a) = self.heads(&mut graph, &self.params, tokens, embeddings, None)?;
        let t = graph.softmax(t)?;
        let a = graph.softmax(a)?;
        let target_distribution = graph.value(t).data().to_vec();
        let action_distribution = graph.value(a).data().to_vec();
        Ok(ExtractionResult {
            article_id: article_id.to_string(),
            target: TargetClass::from_index(argmax(&target_distribution)).expect("head width matches classes"),
            action: ActionClass::from_index(argmax(&action_distribution)).expect("head width matches classes"),
            target_distribution,
            action_distribution,
        })
    }

    /// Mean over the batch of target cross-entropy plus action
    /// cross-entropy.
    pub fn batch_loss(
        &self,
        graph: &mut Graph,
        params: &ParamStore,
        batch: &[&ExtractionExample],
        embeddings: &EmbeddingTable,
        dropout_seed: Option<u64>,
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut losses = Vec::with_capacity(2 * batch.len());
        for ex in batch {
            let (t, a) = self.heads(graph, params, &ex.tokens, embeddings, rng.as_mut())?;
            losses.push(graph.cross_entropy(t, ex.target.index())?);
            losses.push(graph.cross_entropy(a, ex.action.index())?);
        }
        let total = graph.add_n(&losses)?;
        Ok(graph.scale(total, 1.0 / batch.len() as f64)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(&self.config, &self.params)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ExtractorConfig = ckpt.config()?;
        let mut model = Self::new(config)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionMetrics {
    pub target: MacroMetrics,
    pub action: MacroMetrics,
}

/// Macro precision, recall and F1 per task over the classes present in
/// gold.
pub fn evaluate_extraction(results: &[ExtractionResult], gold: &HashMap<String, (TargetClass, ActionClass)>) -> Result<ExtractionMetrics> {
    if gold.is_empty() || results.is_empty() {
        return Err(Error::InvalidInput("extraction evaluation needs gold labels".into()));
    }
    let mut pt = Vec::new();
    let mut gt = Vec::new();
    let mut pa = Vec::new();
    let mut ga = Vec::new();
    for r in results {
        let (t, a) = gold.get(&r.article_id).ok_or_else(|| Error::MissingGold(r.article_id.clone()))?;
        pt.push(r.target.index());
        gt.push(t.index());
        pa.push(r.action.index());
        ga.push(a.index());
    }
    Ok(ExtractionMetrics {
        target: macro_metrics(&pt, &gt, TargetClass::ALL.len())?,
        action: macro_metrics(&pa, &ga, ActionClass::ALL.len())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_target_f1: f64,
    pub dev_action_f1: f64,
}

#[derive(Debug, Clone)]
pub struct ExtractorOutcome {
    pub model: ExtractorModel,
    pub history: Vec<ExtractorEpochStats>,
    pub best_epoch: usize,
    /// Classes with no training example, as `target:<name>` / `action:<name>`.
    pub missing_classes: Vec<String>,
}

fn evaluate_set(model: &ExtractorModel, items: &[ExtractionExample], embeddings: &EmbeddingTable) -> Result<(f64, ExtractionMetrics)> {
    let mut loss = 0.0;
    let mut results = Vec::with_capacity(items.len());
    let mut gold = HashMap::with_capacity(items.len());
    for ex in items {
        let r = model.extract(&ex.article_id, &ex.tokens, embeddings)?;
        loss -= r.target_distribution[ex.target.index()].max(f64::MIN_POSITIVE).ln();
        loss -= r.action_distribution[ex.action.index()].max(f64::MIN_POSITIVE).ln();
        gold.insert(ex.article_id.clone(), (ex.target, ex.action));
        results.push(r);
    }
    Ok((loss / items.len() as f64, evaluate_extraction(&results, &gold)?))
}

/// Trains both heads jointly. Selection keeps the epoch with the best mean
/// of the two dev macro F1 scores (ties: lower dev loss, then earlier
/// epoch); without a dev set the training set is used.
pub fn train_multitask(
    train: &[ExtractionExample],
    dev: &[ExtractionExample],
    embeddings: &EmbeddingTable,
    config: &ExtractorConfig,
) -> Result<ExtractorOutcome> {
    train_multitask_with_progress(train, dev, embeddings, config, |_| {})
}

pub fn train_multitask_with_progress(
    train: &[ExtractionExample],
    dev: &[ExtractionExample],
    embeddings: &EmbeddingTable,
    config: &ExtractorConfig,
    mut on_epoch: impl FnMut(&ExtractorEpochStats),
) -> Result<ExtractorOutcome> {
    if train.len() < 2 {
        return Err(Error::InvalidInput("extractor training needs at least two examples".into()));
    }
    let mut missing_classes = Vec::new();
    for t in TargetClass::ALL {
        if !train.iter().any(|e| e.target == *t) {
            missing_classes.push(format!("target:{t}"));
        }
    }
    for a in ActionClass::ALL {
        if !train.iter().any(|e| e.action == *a) {
            missing_classes.push(format!("action:{a}"));
        }
    }
    for class in &missing_classes {
        tracing::warn!(class = %class, "class absent from extractor training set");
    }

    let mut model = ExtractorModel::new(config.clone())?;
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0e57_7ac7);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ExtractionExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut graph = Graph::new();
            let loss = model.batch_loss(&mut graph, &model.params, &batch, embeddings, Some(rng.gen()))?;
            let grads = graph.backward(loss, &model.params)?;
            adam.step(&mut model.params, &grads)?;
        }
        let (train_loss, train_m) = evaluate_set(&model, train, embeddings)?;
        let (dev_loss, dev_m) = if dev.is_empty() {
            (train_loss, train_m)
        } else {
            evaluate_set(&model, dev, embeddings)?
        };
        let stats = ExtractorEpochStats {
            epoch,
            train_loss,
            dev_loss,
            dev_target_f1: dev_m.target.f1,
            dev_action_f1: dev_m.action.f1,
        };
        on_epoch(&stats);
        let score = (dev_m.target.f1 + dev_m.action.f1) / 2.0;
        let better = match &best {
            None => true,
            Some((s, l, _, _)) => score > *s || (score == *s && dev_loss < *l),
        };
        if better {
            best = Some((score, dev_loss, epoch, model.params.clone()));
        }
        history.push(stats);
    }
    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(ExtractorOutcome {
        model,
        history,
        best_epoch,
        missing_classes,
    })
}
