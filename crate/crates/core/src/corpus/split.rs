use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledArticle;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<LabeledArticle>,
    pub dev: Vec<LabeledArticle>,
    pub test: Vec<LabeledArticle>,
    pub seed: u64,
}

/// Serializable form of a split: article ids only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn ids(&self) -> SplitIds {
        let ids = |v: &[LabeledArticle]| v.iter().map(|l| l.article.id.clone()).collect();
        SplitIds {
            seed: self.seed,
            train: ids(&self.train),
            dev: ids(&self.dev),
            test: ids(&self.test),
        }
    }
}

/// Seeded shuffle followed by a contiguous partition. Train and dev sizes
/// are `round(n * ratio)`; test takes the remainder.
pub fn split(labeled: Vec<LabeledArticle>, ratios: (f64, f64, f64), seed: u64) -> Result<CorpusSplit> {
    let (r_train, r_dev, r_test) = ratios;
    if [r_train, r_dev, r_test].iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidSplit(format!("ratios must be positive, got {ratios:?}")));
    }
    if (r_train + r_dev + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n = labeled.len();
    if n < 3 {
        return Err(Error::InvalidSplit(format!("need at least 3 labeled articles, got {n}")));
    }
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = labeled.iter().find(|l| !ids.insert(l.article.id.as_str())) {
        return Err(Error::InvalidSplit(format!("article `{}` appears twice", dup.article.id)));
    }

    let mut items = labeled;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);

    let n_train = ((n as f64 * r_train).round() as usize).min(n);
    let n_dev = ((n as f64 * r_dev).round() as usize).min(n - n_train);
    let test = items.split_off(n_train + n_dev);
    let dev = items.split_off(n_train);
    Ok(CorpusSplit {
        train: items,
        dev,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotationLabel, Article};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn items(n: usize) -> Vec<LabeledArticle> {
        (0..n)
            .map(|i| LabeledArticle {
                article: Article {
                    id: format!("a{i}"),
                    city: None,
                    state: None,
                    date: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
                    title: String::new(),
                    body: "x".into(),
                    sentences: vec![vec!["x".into()]],
                },
                label: AnnotationLabel {
                    article_id: format!("a{i}"),
                    is_event: i % 2 == 0,
                    target: None,
                    action: None,
                    annotator_id: "ann".into(),
                },
            })
            .collect()
    }

    #[test]
    fn seventy_ten_twenty() {
        let s = split(items(100), (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (70, 10, 20));
    }

    #[test]
    fn same_seed_same_split() {
        let a = split(items(40), (0.7, 0.1, 0.2), 9).unwrap().ids();
        let b = split(items(40), (0.7, 0.1, 0.2), 9).unwrap().ids();
        assert_eq!(a, b);
        let c = split(items(40), (0.7, 0.1, 0.2), 10).unwrap().ids();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(split(items(10), (0.5, 0.5, 0.5), 1).is_err());
        assert!(split(items(10), (1.0, 0.0, 0.0), 1).is_err());
        assert!(split(items(2), (0.7, 0.1, 0.2), 1).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_exact(n in 3usize..120, seed in 0u64..1000, a in 1u32..8, b in 1u32..8, c in 1u32..8) {
            let total = (a + b + c) as f64;
            let ratios = (a as f64 / total, b as f64 / total, 1.0 - (a + b) as f64 / total);
            let s = split(items(n), ratios, seed).unwrap();
            let ids = s.ids();
            let mut all: Vec<_> = ids.train.iter().chain(&ids.dev).chain(&ids.test).cloned().collect();
            all.sort();
            let mut expected: Vec<_> = (0..n).map(|i| format!("a{i}")).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            for (got, r) in [(ids.train.len(), ratios.0), (ids.dev.len(), ratios.1), (ids.test.len(), ratios.2)] {
                prop_assert!((got as f64 - n as f64 * r).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
