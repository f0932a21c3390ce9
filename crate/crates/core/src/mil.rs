//! Multi-instance event detector.
//!
//! Every sentence of an article is encoded by a bidirectional LSTM over its
//! word vectors. A convolutional bank pools the sequence of sentence
//! encodings into one context vector for the article, which is appended to
//! each sentence encoding before a sigmoid scorer assigns a per-sentence
//! probability. The article probability is the mean of the `k` highest
//! sentence scores.

use std::collections::HashMap;

use ndlearn::{
    dropout_node, Activation, Adam, AdamConfig, BiLstm, Checkpoint, ConvBank, ConvBankSpec, Dense,
    Graph, NodeId, ParamStore, Tensor,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, CorpusSplit, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{binary_metrics, BinaryMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MilConfig {
    pub hidden_dim: usize,
    pub conv_widths: Vec<usize>,
    pub n_filters: usize,
    pub dropout: f64,
    pub k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub embedding_dim: usize,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 50,
            conv_widths: vec![2, 3, 4],
            n_filters: 50,
            dropout: 0.25,
            k: 2,
            learning_rate: 8e-5,
            batch_size: 5,
            epochs: 50,
            embedding_dim: 300,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad(format!("decision threshold {} not in (0, 1)", self.decision_threshold));
        }
        if self.hidden_dim == 0 || self.n_filters == 0 || self.embedding_dim == 0 || self.batch_size == 0 {
            return bad("dimensions and batch size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        Ok(())
    }
}

/// Outcome of running the detector on one article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub article_id: String,
    pub bag_probability: f64,
    pub predicted: bool,
    /// Indices of the `k` highest sentence scores, highest first.
    pub key_sentence_indices: Vec<usize>,
    pub sentence_scores: Vec<f64>,
}

/// Indices of the `k` largest scores (clipped to the number of scores),
/// highest first; equal scores keep the lower index first.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

/// Mean of the `k` largest scores, with `k` clipped to the number of scores.
pub fn top_k_mean(scores: &[f64], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("top_k_mean of an empty score list".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let idx = top_k_indices(scores, k);
    Ok(idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64)
}

#[derive(Debug, Clone)]
pub struct MilModel {
    pub config: MilConfig,
    pub params: ParamStore,
    encoder: BiLstm,
    context: ConvBank,
    scorer: Dense,
}

struct ArticleNodes {
    bag: NodeId,
    scores: NodeId,
    key: Vec<usize>,
}

impl MilModel {
    pub fn new(config: MilConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let encoder = BiLstm::new(&mut params, "sentence", config.embedding_dim, config.hidden_dim, &mut rng)?;
        let spec = ConvBankSpec {
            widths: config.conv_widths.clone(),
            n_filters: config.n_filters,
        };
        let context = ConvBank::new(&mut params, "context", encoder.output_dim(), spec, &mut rng)?;
        let scorer_in = encoder.output_dim() + context.output_dim();
        let scorer = Dense::new(&mut params, "scorer", scorer_in, 1, &mut rng)?;
        Ok(Self {
            config,
            params,
            encoder,
            context,
            scorer,
        })
    }

    /// Sets the scorer weights and bias to zero, so every sentence scores 0.5.
    pub fn zero_scorer(&mut self) {
        for id in [self.scorer.weight, self.scorer.bias] {
            self.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scorer_input_dim(&self) -> usize {
        self.scorer.input_dim
    }

    fn article_nodes(
        &self,
        graph: &mut Graph,
        params: &ParamStore,
        article: &Article,
        embeddings: &EmbeddingTable,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ArticleNodes> {
        if !article.is_tokenized() {
            return Err(Error::Untokenized(article.id.clone()));
        }
        if embeddings.dim() != self.config.embedding_dim {
            return Err(Error::InvalidInput(format!(
                "embedding table has dimension {}, model expects {}",
                embeddings.dim(),
                self.config.embedding_dim
            )));
        }
        let mut local = Vec::new();
        for sentence in article.model_sentences() {
            let x = Tensor::matrix(sentence.len(), embeddings.dim(), embeddings.embed(sentence))?;
            let x = graph.constant(x);
            let enc = self.encoder.forward(graph, params, x)?;
            local.push(dropout_node(graph, enc.summary, self.config.dropout, rng.as_deref_mut())?);
        }
        let stacked = graph.stack_rows(&local)?;
        let context = self.context.forward(graph, params, stacked)?;
        let mut score_nodes = Vec::with_capacity(local.len());
        for &sentence in &local {
            let joined = graph.concat(&[sentence, context])?;
            score_nodes.push(self.scorer.forward(graph, params, joined, Activation::Sigmoid)?);
        }
        let scores = graph.concat(&score_nodes)?;
        let key = top_k_indices(graph.value(scores).data(), self.config.k);
        let bag = graph.select_mean(scores, &key)?;
        Ok(ArticleNodes { bag, scores, key })
    }

    /// Runs the detector. Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &self,
        article: &Article,
        embeddings: &EmbeddingTable,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DetectionResult> {
        let mut graph = Graph::new();
        let nodes = self.article_nodes(&mut graph, &self.params, article, embeddings, dropout_rng)?;
        let bag_probability = graph.value(nodes.bag).item();
        Ok(DetectionResult {
            article_id: article.id.clone(),
            bag_probability,
            predicted: bag_probability >= self.config.decision_threshold,
            key_sentence_indices: nodes.key,
            sentence_scores: graph.value(nodes.scores).data().to_vec(),
        })
    }

    /// Mean binary cross-entropy of a batch, built against `params` so that
    /// callers can evaluate perturbed parameter sets. With `dropout_seed`
    /// set, dropout masks are drawn from a generator seeded with it.
    pub fn batch_loss(
        &self,
        graph: &mut Graph,
        params: &ParamStore,
        batch: &[(&Article, bool)],
        embeddings: &EmbeddingTable,
        dropout_seed: Option<u64>,
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut losses = Vec::with_capacity(batch.len());
        for &(article, label) in batch {
            let nodes = self.article_nodes(graph, params, article, embeddings, rng.as_mut())?;
            losses.push(graph.bce(nodes.bag, if label { 1.0 } else { 0.0 })?);
        }
        let total = graph.add_n(&losses)?;
        Ok(graph.scale(total, 1.0 / batch.len() as f64)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint::from_store(&self.config, &self.params)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: MilConfig = ckpt.config()?;
        let mut model = Self::new(config)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }
}

/// Runs the frozen detector over `articles`, in order.
pub fn predict(articles: &[Article], model: &MilModel, embeddings: &EmbeddingTable) -> Result<Vec<DetectionResult>> {
    articles.iter().map(|a| model.forward(a, embeddings, None)).collect()
}

/// Precision, recall and F1 of `results` against gold event flags.
pub fn evaluate(results: &[DetectionResult], gold: &HashMap<String, bool>) -> Result<BinaryMetrics> {
    let mut predicted = Vec::with_capacity(results.len());
    let mut truth = Vec::with_capacity(results.len());
    for r in results {
        let g = gold
            .get(&r.article_id)
            .ok_or_else(|| Error::MissingGold(r.article_id.clone()))?;
        predicted.push(r.predicted);
        truth.push(*g);
    }
    binary_metrics(&predicted, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the training set, evaluated without dropout after the
    /// epoch's updates.
    pub train_loss: f64,
    pub train_f1: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MilModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

fn evaluate_set(model: &MilModel, items: &[(&Article, bool)], embeddings: &EmbeddingTable) -> Result<(f64, BinaryMetrics)> {
    let mut loss = 0.0;
    let mut predicted = Vec::with_capacity(items.len());
    let mut gold = Vec::with_capacity(items.len());
    for &(article, label) in items {
        let r = model.forward(article, embeddings, None)?;
        loss += ndlearn::bce_value(r.bag_probability, if label { 1.0 } else { 0.0 });
        predicted.push(r.predicted);
        gold.push(label);
    }
    let n = items.len().max(1) as f64;
    Ok((loss / n, binary_metrics(&predicted, &gold)?))
}

/// Mini-batch training with a seeded shuffle each epoch, dropout, and Adam.
/// Keeps the parameters of the epoch with the best dev F1 (ties: lower dev
/// loss, then earlier epoch). Without a dev set the training set is used
/// for selection.
pub fn train(split: &CorpusSplit, embeddings: &EmbeddingTable, config: &MilConfig) -> Result<TrainOutcome> {
    train_with_progress(split, embeddings, config, |_| {})
}

pub fn train_with_progress(
    split: &CorpusSplit,
    embeddings: &EmbeddingTable,
    config: &MilConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let train_items: Vec<(&Article, bool)> = split.train.iter().map(|l| (&l.article, l.label.is_event)).collect();
    let dev_items: Vec<(&Article, bool)> = split.dev.iter().map(|l| (&l.article, l.label.is_event)).collect();
    let positives = train_items.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == train_items.len() {
        return Err(Error::SingleClass);
    }

    let mut model = MilModel::new(config.clone())?;
    let mut adam = Adam::new(
        &model.params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Article, bool)> = chunk.iter().map(|&i| train_items[i]).collect();
            let mut graph = Graph::new();
            let loss = model.batch_loss(&mut graph, &model.params, &batch, embeddings, Some(rng.gen()))?;
            let grads = graph.backward(loss, &model.params)?;
            adam.step(&mut model.params, &grads)?;
        }
        let (train_loss, train_m) = evaluate_set(&model, &train_items, embeddings)?;
        let (dev_loss, dev_m) = if dev_items.is_empty() {
            (train_loss, train_m)
        } else {
            evaluate_set(&model, &dev_items, embeddings)?
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            train_f1: train_m.f1,
            dev_loss,
            dev_f1: dev_m.f1,
        };
        on_epoch(&stats);
        history.push(stats);
        let better = match &best {
            None => true,
            Some((f1, loss, _, _)) => dev_m.f1 > *f1 || (dev_m.f1 == *f1 && dev_loss < *loss),
        };
        if better {
            best = Some((dev_m.f1, dev_loss, epoch, model.params.clone()));
        }
    }
    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
