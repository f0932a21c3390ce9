//! Uncertainty sampling for annotation and the label store it feeds.
//!
//! Unlabeled articles are drawn without replacement with weights from a
//! Gaussian bump centred on the decision boundary, so articles the detector
//! is unsure about are the most likely to reach an annotator.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_labels, AnnotationLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mean: 0.5,
            std: 0.1,
            n_samples: 1000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.mean < 1.0) {
            return Err(Error::InvalidInput(format!("sampler mean {} not in (0, 1)", self.mean)));
        }
        if !(self.std > 0.0) || !self.std.is_finite() {
            return Err(Error::InvalidInput(format!("sampler std {} must be positive", self.std)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Unnormalised Gaussian density at `p`.
pub fn uncertainty_weight(p: f64, mean: f64, std: f64) -> f64 {
    (-(p - mean).powi(2) / (2.0 * std * std)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueStatus {
    Pending,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub article_id: String,
    pub bag_probability: f64,
    pub sample_weight: f64,
    pub status: QueueStatus,
}

/// Articles selected for annotation, in draw order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationQueue {
    items: Vec<QueueItem>,
}

impl AnnotationQueue {
    pub fn from_items(items: Vec<QueueItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.article_id.as_str()) {
                return Err(Error::InvalidInput(format!("article {} queued twice", item.article_id)));
            }
            if !(item.sample_weight > 0.0) {
                return Err(Error::InvalidInput(format!("article {} has non-positive weight", item.article_id)));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[QueueItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, article_id: &str) -> Option<&QueueItem> {
        self.items.iter().find(|i| i.article_id == article_id)
    }

    pub fn contains(&self, article_id: &str) -> bool {
        self.get(article_id).is_some()
    }

    /// Up to `limit` pending items, in draw order.
    pub fn pending(&self, limit: usize) -> Vec<&QueueItem> {
        self.items.iter().filter(|i| i.status == QueueStatus::Pending).take(limit).collect()
    }

    pub fn count(&self, status: QueueStatus) -> usize {
        self.items.iter().filter(|i| i.status == status).count()
    }

    pub fn set_status(&mut self, article_id: &str, status: QueueStatus) -> Result<()> {
        let item = self
            .items
            .iter_mut()
            .find(|i| i.article_id == article_id)
            .ok_or_else(|| Error::UnknownArticle(article_id.to_string()))?;
        item.status = status;
        Ok(())
    }

    /// Appends items for articles not already queued; returns how many were
    /// added.
    pub fn extend(&mut self, other: AnnotationQueue) -> usize {
        let before = self.items.len();
        for item in other.items {
            if !self.contains(&item.article_id) {
                self.items.push(item);
            }
        }
        self.items.len() - before
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("queue items serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Self::from_items(items)
    }
}

/// Draws `config.n_samples` distinct articles from `pool`, one at a time,
/// each with probability proportional to its weight among those not yet
/// drawn.
pub fn sample_uncertain(pool: &[(String, f64)], config: &SamplerConfig) -> Result<AnnotationQueue> {
    config.validate()?;
    if pool.len() < config.n_samples {
        return Err(Error::InvalidInput(format!(
            "pool has {} articles, {} requested",
            pool.len(),
            config.n_samples
        )));
    }
    let mut seen = HashSet::new();
    let mut weights = Vec::with_capacity(pool.len());
    for (id, p) in pool {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("article {id} appears twice in the pool")));
        }
        if !(0.0..=1.0).contains(p) {
            return Err(Error::InvalidInput(format!("probability {p} of {id} outside [0, 1]")));
        }
        weights.push(uncertainty_weight(*p, config.mean, config.std));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("all remaining sample weights are zero".into()));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            chosen = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let i = chosen.expect("total weight is positive");
        items.push(QueueItem {
            article_id: pool[i].0.clone(),
            bag_probability: pool[i].1,
            sample_weight: weights[i],
            status: QueueStatus::Pending,
        });
        weights[i] = 0.0;
    }
    Ok(AnnotationQueue { items })
}

/// Append-only annotation records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelStore {
    records: Vec<AnnotationLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeSummary {
    pub appended: usize,
    pub unchanged: usize,
}

impl LabelStore {
    pub fn new(records: Vec<AnnotationLabel>) -> Self {
        Self { records }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(Self::new(parse_labels(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn records(&self) -> &[AnnotationLabel] {
        &self.records
    }

    /// The newest record per (article, annotator), in order of first
    /// appearance.
    pub fn current(&self) -> Vec<AnnotationLabel> {
        let mut slot: HashMap<(&str, &str), usize> = HashMap::new();
        let mut out: Vec<AnnotationLabel> = Vec::new();
        for r in &self.records {
            match slot.get(&(r.article_id.as_str(), r.annotator_id.as_str())) {
                Some(&i) => out[i] = r.clone(),
                None => {
                    slot.insert((r.article_id.as_str(), r.annotator_id.as_str()), out.len());
                    out.push(r.clone());
                }
            }
        }
        out
    }

    /// The newest record `annotator_id` made for `article_id`.
    pub fn latest(&self, article_id: &str, annotator_id: &str) -> Option<&AnnotationLabel> {
        self.records
            .iter()
            .rev()
            .find(|r| r.article_id == article_id && r.annotator_id == annotator_id)
    }

    /// Records in the label-file format, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("labels serialize"));
            out.push('\n');
        }
        out
    }
}

/// Validates every label against `queue`, then appends the new ones to
/// `store` and marks their articles labeled. A label identical to the
/// annotator's latest record for that article is not stored again; a
/// different one is appended and supersedes it.
pub fn merge_labels(queue: &mut AnnotationQueue, store: &mut LabelStore, labels: &[AnnotationLabel]) -> Result<MergeSummary> {
    for label in labels {
        label.validate()?;
        if !queue.contains(&label.article_id) {
            return Err(Error::UnknownArticle(label.article_id.clone()));
        }
    }
    let mut summary = MergeSummary::default();
    for label in labels {
        if store.latest(&label.article_id, &label.annotator_id) == Some(label) {
            summary.unchanged += 1;
        } else {
            store.records.push(label.clone());
            summary.appended += 1;
        }
        queue.set_status(&label.article_id, QueueStatus::Labeled)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ActionClass, TargetClass};

    fn pool(ps: &[f64]) -> Vec<(String, f64)> {
        ps.iter().enumerate().map(|(i, &p)| (format!("a{i}"), p)).collect()
    }

    fn label(id: &str, annotator: &str, is_event: bool) -> AnnotationLabel {
        AnnotationLabel {
            article_id: id.into(),
            is_event,
            target: is_event.then_some(TargetClass::Religion),
            action: is_event.then_some(ActionClass::Vandalism),
            annotator_id: annotator.into(),
        }
    }

    #[test]
    fn weight_ratio() {
        let ratio = uncertainty_weight(0.5, 0.5, 0.1) / uncertainty_weight(0.8, 0.5, 0.1);
        assert!((ratio - 4.5f64.exp()).abs() < 1e-9);
        assert!((ratio - 90.0171).abs() < 1e-3);
    }

    #[test]
    fn weights_are_monotone_in_distance() {
        let ps = [0.5, 0.45, 0.6, 0.3, 0.85, 1.0];
        for w in ps.windows(2) {
            let a = uncertainty_weight(w[0], 0.5, 0.1);
            let b = uncertainty_weight(w[1], 0.5, 0.1);
            assert!(a > b);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_unique() {
        let p = pool(&(0..200).map(|i| i as f64 / 199.0).collect::<Vec<_>>());
        let cfg = SamplerConfig {
            n_samples: 50,
            seed: 3,
            ..SamplerConfig::default()
        };
        let a = sample_uncertain(&p, &cfg).unwrap();
        let b = sample_uncertain(&p, &cfg).unwrap();
        assert_eq!(a, b);
        let ids: HashSet<&str> = a.items().iter().map(|i| i.article_id.as_str()).collect();
        assert_eq!(ids.len(), 50);
        let c = sample_uncertain(&p, &SamplerConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn whole_pool_can_be_drawn() {
        let p = pool(&[0.5, 0.5, 0.5]);
        let q = sample_uncertain(&p, &SamplerConfig { n_samples: 3, ..SamplerConfig::default() }).unwrap();
        assert_eq!(q.len(), 3);
        assert!(sample_uncertain(&p, &SamplerConfig { n_samples: 4, ..SamplerConfig::default() }).is_err());
    }

    #[test]
    fn underflowing_weights_are_rejected() {
        let p = pool(&[0.0, 1.0]);
        let cfg = SamplerConfig {
            std: 0.001,
            n_samples: 1,
            ..SamplerConfig::default()
        };
        assert!(sample_uncertain(&p, &cfg).is_err());
    }

    #[test]
    fn bad_pools_are_rejected() {
        let cfg = SamplerConfig {
            n_samples: 1,
            ..SamplerConfig::default()
        };
        assert!(sample_uncertain(&pool(&[1.2]), &cfg).is_err());
        let dup = vec![("x".to_string(), 0.5), ("x".to_string(), 0.4)];
        assert!(sample_uncertain(&dup, &cfg).is_err());
        assert!(sample_uncertain(&pool(&[0.5]), &SamplerConfig { std: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn merging_marks_and_is_idempotent() {
        let mut q = sample_uncertain(&pool(&[0.5; 5]), &SamplerConfig { n_samples: 5, ..SamplerConfig::default() }).unwrap();
        let mut store = LabelStore::default();
        let ids: Vec<String> = q.items().iter().map(|i| i.article_id.clone()).collect();
        let labels: Vec<_> = ids[..3].iter().map(|id| label(id, "ann1", true)).collect();
        let s = merge_labels(&mut q, &mut store, &labels).unwrap();
        assert_eq!(s, MergeSummary { appended: 3, unchanged: 0 });
        assert_eq!(q.count(QueueStatus::Labeled), 3);
        assert_eq!(q.count(QueueStatus::Pending), 2);

        let again = merge_labels(&mut q, &mut store, &labels[..1]).unwrap();
        assert_eq!(again, MergeSummary { appended: 0, unchanged: 1 });
        assert_eq!(store.records().len(), 3);

        merge_labels(&mut q, &mut store, &[label(&ids[0], "ann2", false)]).unwrap();
        assert_eq!(store.records().len(), 4);

        merge_labels(&mut q, &mut store, &[label(&ids[0], "ann1", false)]).unwrap();
        assert_eq!(store.records().len(), 5);
        let current = store.current();
        assert_eq!(current.len(), 4);
        assert!(!current[0].is_event);

        assert!(matches!(
            merge_labels(&mut q, &mut store, &[label("nope", "ann1", false)]),
            Err(Error::UnknownArticle(_))
        ));
        assert_eq!(parse_labels(&store.to_jsonl()).unwrap(), store.records());
    }

    #[test]
    fn queue_jsonl_round_trip() {
        let q = sample_uncertain(&pool(&[0.2, 0.55, 0.71]), &SamplerConfig { n_samples: 2, ..SamplerConfig::default() }).unwrap();
        assert_eq!(AnnotationQueue::from_jsonl(&q.to_jsonl()).unwrap(), q);
    }
}
