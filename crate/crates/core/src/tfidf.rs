//! TF-IDF features with an L2-regularised logistic regression on top.

use std::collections::{BTreeMap, HashMap};

use ndlearn::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use crate::corpus::{word_tokens, Article};
use crate::error::{Error, Result};
use crate::metrics::{binary_metrics, BinaryMetrics};

/// Sparse row: `(column, value)` pairs in increasing column order.
pub type SparseRow = Vec<(usize, f64)>;

pub const DEFAULT_MAX_FEATURES: usize = 20_000;

/// Title and body tokens of an article, all sentences included.
pub fn document_tokens(article: &Article) -> Vec<String> {
    let mut tokens = word_tokens(&article.title);
    if article.is_tokenized() {
        tokens.extend(article.sentences.iter().flatten().cloned());
    } else {
        tokens.extend(word_tokens(&article.body));
    }
    tokens
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVectorizer {
    vocabulary: HashMap<String, usize>,
    terms: Vec<String>,
    idf: Vec<f64>,
    max_features: usize,
}

impl TfidfVectorizer {
    /// Learns the vocabulary and idf weights from `docs` and returns their
    /// rows. Columns are the kept terms in lexicographic order.
    pub fn fit_transform<S: AsRef<str>>(docs: &[Vec<S>], max_features: usize) -> Result<(Self, Vec<SparseRow>)> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("cannot fit TF-IDF on an empty corpus".into()));
        }
        if max_features == 0 {
            return Err(Error::InvalidInput("max_features must be positive".into()));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_features);
        ranked.sort_by(|a, b| a.0.cmp(b.0));

        let n = docs.len() as f64;
        let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let idf = ranked.iter().map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let vocabulary = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let v = Self {
            vocabulary,
            terms,
            idf,
            max_features,
        };
        let rows = docs.iter().map(|d| v.transform(d)).collect();
        Ok((v, rows))
    }

    pub fn from_parts(terms: Vec<String>, idf: Vec<f64>, max_features: usize) -> Result<Self> {
        if terms.len() != idf.len() || terms.len() > max_features {
            return Err(Error::InvalidInput("vocabulary and idf lengths disagree".into()));
        }
        let vocabulary: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if vocabulary.len() != terms.len() {
            return Err(Error::InvalidInput("vocabulary has repeated terms".into()));
        }
        Ok(Self {
            vocabulary,
            terms,
            idf,
            max_features,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    /// Raw counts times idf, scaled to unit L2 norm. Unknown tokens are
    /// ignored; a document with no known token gives an empty row.
    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> SparseRow {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in doc {
            if let Some(&i) = self.vocabulary.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub max_features: usize,
    pub threshold: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iterations: 5000,
            tolerance: 1e-6,
            max_features: DEFAULT_MAX_FEATURES,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub threshold: f64,
    /// Full-batch steps taken and the final gradient norm.
    pub iterations: usize,
    pub gradient_norm: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(row: &SparseRow, w: &[f64]) -> f64 {
    row.iter().map(|&(i, v)| v * w[i]).sum()
}

impl LinearModel {
    pub fn probability(&self, row: &SparseRow) -> f64 {
        sigmoid(dot(row, &self.weights) + self.bias)
    }

    pub fn predict(&self, row: &SparseRow) -> bool {
        self.probability(row) >= self.threshold
    }
}

/// Mean logistic loss plus `l2/2 * |w|^2` (bias unpenalised), and its
/// gradient `(dw, db)`.
pub fn loss_and_grad(rows: &[SparseRow], labels: &[bool], weights: &[f64], bias: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let z = dot(row, weights) + bias;
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let r = (sigmoid(z) - y) / n;
        for &(i, v) in row {
            gw[i] += r * v;
        }
        gb += r;
    }
    loss /= n;
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in gw.iter_mut().zip(weights) {
        *g += l2 * w;
    }
    (loss, gw, gb)
}

/// Full-batch gradient descent. For rows of norm at most one the Hessian is
/// bounded by `diag(0.5 + l2, ..., 0.5 + l2, 0.5)`, so weights move with
/// step `1 / (0.5 + l2)` and the bias with step `2`, and the objective never
/// increases. Stops when the gradient norm falls below the tolerance or after the
/// iteration cap.
pub fn train_linear(rows: &[SparseRow], labels: &[bool], n_features: usize, config: &LinearConfig) -> Result<LinearModel> {
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput("rows and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    if !(config.l2 >= 0.0) {
        return Err(Error::InvalidInput("l2 must be non-negative".into()));
    }
    if rows.iter().flatten().any(|&(i, v)| i >= n_features || !v.is_finite()) {
        return Err(Error::InvalidInput("row entry outside the feature range or non-finite".into()));
    }
    let step = 1.0 / (0.5 + config.l2);
    let bias_step = 2.0;
    let mut w = vec![0.0; n_features];
    let mut b = 0.0;
    let mut iterations = 0;
    let mut norm;
    loop {
        let (_, gw, gb) = loss_and_grad(rows, labels, &w, b, config.l2);
        norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if norm < config.tolerance || iterations >= config.max_iterations {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= step * gi;
        }
        b -= bias_step * gb;
        iterations += 1;
    }
    Ok(LinearModel {
        weights: w,
        bias: b,
        l2: config.l2,
        threshold: config.threshold,
        iterations,
        gradient_norm: norm,
    })
}

/// A fitted vectorizer and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfBaseline {
    pub vectorizer: TfidfVectorizer,
    pub model: LinearModel,
}

#[derive(Serialize, Deserialize)]
struct BaselineConfig {
    terms: Vec<String>,
    max_features: usize,
    l2: f64,
    threshold: f64,
    iterations: usize,
    gradient_norm: f64,
}

impl TfidfBaseline {
    pub fn fit(articles: &[Article], labels: &[bool], config: &LinearConfig) -> Result<Self> {
        let docs: Vec<Vec<String>> = articles.iter().map(document_tokens).collect();
        let (vectorizer, rows) = TfidfVectorizer::fit_transform(&docs, config.max_features)?;
        let model = train_linear(&rows, labels, vectorizer.len(), config)?;
        Ok(Self { vectorizer, model })
    }

    pub fn probability(&self, article: &Article) -> f64 {
        self.model.probability(&self.vectorizer.transform(&document_tokens(article)))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config = BaselineConfig {
            terms: self.vectorizer.terms.clone(),
            max_features: self.vectorizer.max_features,
            l2: self.model.l2,
            threshold: self.model.threshold,
            iterations: self.model.iterations,
            gradient_norm: self.model.gradient_norm,
        };
        let mut ckpt = Checkpoint::new(&config)?;
        let v = self.vectorizer.len().max(1);
        let pad = |mut x: Vec<f64>| {
            // zero-length tensors are not representable; an empty
            // vocabulary is stored as a single unused zero
            x.resize(v, 0.0);
            x
        };
        ckpt.insert("idf", Tensor::vector(pad(self.vectorizer.idf.clone())));
        ckpt.insert("weights", Tensor::vector(pad(self.model.weights.clone())));
        ckpt.insert("bias", Tensor::scalar(self.model.bias));
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: BaselineConfig = ckpt.config()?;
        let n = config.terms.len();
        let idf = ckpt.tensor("idf")?;
        let weights = ckpt.tensor("weights")?;
        if idf.len() < n || weights.len() < n {
            return Err(Error::InvalidInput("checkpoint tensors shorter than the vocabulary".into()));
        }
        let idf = idf.data()[..n].to_vec();
        let weights = weights.data()[..n].to_vec();
        let bias = ckpt.tensor("bias")?.item();
        Ok(Self {
            vectorizer: TfidfVectorizer::from_parts(config.terms, idf, config.max_features)?,
            model: LinearModel {
                weights,
                bias,
                l2: config.l2,
                threshold: config.threshold,
                iterations: config.iterations,
                gradient_norm: config.gradient_norm,
            },
        })
    }
}

/// Precision, recall and F1 of the baseline on labelled articles.
pub fn evaluate_baseline(baseline: &TfidfBaseline, articles: &[Article], labels: &[bool]) -> Result<BinaryMetrics> {
    let predicted: Vec<bool> = articles
        .iter()
        .map(|a| baseline.probability(a) >= baseline.model.threshold)
        .collect();
    binary_metrics(&predicted, labels)
}
