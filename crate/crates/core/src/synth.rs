//! Generators for synthetic corpora with known answers.
//!
//! Positive articles carry one trigger sentence built from an action word
//! and a target word; every other sentence is drawn from a neutral filler
//! vocabulary. The trigger position and the planted classes are recorded so
//! that detectors and extractors can be scored against them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_embeddings, tokenize, ActionClass, AnnotationLabel, Article, EmbeddingTable, LabeledArticle, TargetClass};
use crate::dedup::IncidentRecord;
use crate::error::Result;
use crate::stats::CountTable;

const FILLER: &[&str] = &[
    "council", "meeting", "budget", "library", "weather", "traffic", "parade", "garden", "museum", "concert",
    "school", "board", "voted", "approved", "residents", "local", "market", "farmers", "season", "festival",
    "bridge", "repairs", "construction", "project", "community", "center", "opened", "morning", "afternoon",
    "evening", "weekend", "volunteers", "donated", "funds", "park", "trail", "committee", "planning", "tuesday",
    "thursday", "students", "teachers", "award", "recognized", "annual", "event", "crowd", "gathered", "town",
    "hall", "schedule", "announced", "new", "program", "summer", "winter", "downtown", "business", "owners",
];

const TARGET_WORDS: [&[&str]; 8] = [
    &["racial", "black"],
    &["immigrant", "foreign"],
    &["transgender", "women"],
    &["jewish", "mosque"],
    &["gay", "lesbian"],
    &["antifa", "extremist"],
    &["republican", "democrat"],
    &["disabled", "wheelchair"],
];

const ACTION_WORDS: [&[&str]; 4] = [
    &["assaulted", "punched"],
    &["arson", "torched"],
    &["vandalized", "spray"],
    &["rally", "marched"],
];

const CITIES: &[(&str, &str)] = &[
    ("Springfield", "IL"),
    ("Portland", "OR"),
    ("Madison", "WI"),
    ("Austin", "TX"),
    ("Columbus", "OH"),
    ("Albany", "NY"),
    ("Boulder", "CO"),
    ("Tucson", "AZ"),
    ("Raleigh", "NC"),
    ("Tacoma", "WA"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_articles: usize,
    pub n_positive: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Seeds the word vectors separately, so corpora with different `seed`
    /// can share one vector table.
    pub vector_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_articles: 50,
            n_positive: 25,
            min_sentences: 3,
            max_sentences: 7,
            min_words: 5,
            max_words: 10,
            embedding_dim: 300,
            seed: 0,
            vector_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Tokenized articles, in generation order.
    pub articles: Vec<Article>,
    /// One gold label per article.
    pub labels: Vec<AnnotationLabel>,
    /// Sentence index of the trigger in each positive article.
    pub trigger_index: BTreeMap<String, usize>,
    /// Word vectors for the whole vocabulary.
    pub vectors: Vec<(String, Vec<f64>)>,
    pub embedding_dim: usize,
}

impl SyntheticCorpus {
    pub fn labeled(&self) -> Vec<LabeledArticle> {
        self.articles
            .iter()
            .zip(&self.labels)
            .map(|(a, l)| LabeledArticle {
                article: a.clone(),
                label: l.clone(),
            })
            .collect()
    }

    pub fn positives(&self) -> Vec<LabeledArticle> {
        self.labeled().into_iter().filter(|l| l.label.is_event).collect()
    }

    /// The vectors in the whitespace-separated text format read by
    /// [`crate::corpus::load_embeddings`].
    pub fn vectors_text(&self) -> String {
        vectors_text(&self.vectors)
    }

    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        let text = self.vectors_text();
        let vocab = self.vectors.iter().map(|(t, _)| t.as_str());
        read_embeddings(text.as_bytes(), vocab, self.embedding_dim, 0)
    }
}

fn sentence_text(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

fn filler_sentence(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<&'static str> {
    let n = rng.gen_range(cfg.min_words..=cfg.max_words);
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect()
}

/// Sentences of one article. With `planted`, one sentence (whose index is
/// returned) carries an action word and the target words of the class.
/// Without it, `target_noise` puts a target word into a filler sentence
/// half of the time.
fn body_sentences(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    planted: Option<(TargetClass, ActionClass)>,
    target_noise: bool,
) -> (Vec<Vec<&'static str>>, Option<usize>) {
    let n_sent = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
    let mut sentences: Vec<Vec<&str>> = (0..n_sent).map(|_| filler_sentence(rng, cfg)).collect();
    if let Some((t, a)) = planted {
        let mut trigger = filler_sentence(rng, cfg);
        let len = trigger.len();
        trigger[rng.gen_range(0..len)] = *ACTION_WORDS[a.index()].choose(rng).unwrap();
        for word in TARGET_WORDS[t.index()] {
            let mut slot = rng.gen_range(0..len);
            while ACTION_WORDS.iter().chain(&TARGET_WORDS).any(|w| w.contains(&trigger[slot])) {
                slot = (slot + 1) % len;
            }
            trigger[slot] = word;
        }
        let at = rng.gen_range(0..n_sent);
        sentences[at] = trigger;
        return (sentences, Some(at));
    }
    if target_noise && rng.gen_bool(0.5) {
        // target vocabulary without an action keeps the task from being
        // solvable by target words alone
        let at = rng.gen_range(0..n_sent);
        let len = sentences[at].len();
        let t = TARGET_WORDS.choose(rng).unwrap();
        sentences[at][rng.gen_range(0..len)] = t.choose(rng).unwrap();
    }
    (sentences, None)
}

/// Generates a planted-trigger corpus. Positives cycle through the target
/// and action classes so that every class occurs when there are at least
/// eight positives.
pub fn planted_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.n_positive > cfg.n_articles
        || cfg.min_sentences == 0
        || cfg.min_sentences > cfg.max_sentences
        || cfg.min_words < 2
        || cfg.min_words > cfg.max_words
        || cfg.embedding_dim == 0
    {
        return Err(crate::Error::InvalidInput(format!("inconsistent synthetic corpus settings {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut positive = vec![false; cfg.n_articles];
    positive[..cfg.n_positive].iter_mut().for_each(|p| *p = true);
    positive.shuffle(&mut rng);

    let base = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    let mut articles = Vec::with_capacity(cfg.n_articles);
    let mut labels = Vec::with_capacity(cfg.n_articles);
    let mut trigger_index = BTreeMap::new();
    let mut n_pos = 0;
    for (i, &is_event) in positive.iter().enumerate() {
        let id = format!("syn-{i:04}");
        let planted = is_event.then(|| {
            let t = TargetClass::ALL[n_pos % TargetClass::ALL.len()];
            let a = ActionClass::ALL[(n_pos / 2) % ActionClass::ALL.len()];
            n_pos += 1;
            (t, a)
        });
        let (sentences, at) = body_sentences(&mut rng, cfg, planted, true);
        if let Some(at) = at {
            trigger_index.insert(id.clone(), at);
        }
        let (target, action) = (planted.map(|p| p.0), planted.map(|p| p.1));
        let (city, state) = CITIES[rng.gen_range(0..CITIES.len())];
        let body = sentences.iter().map(|s| sentence_text(s)).collect::<Vec<_>>().join(" ");
        let article = tokenize(&Article {
            id: id.clone(),
            city: Some(city.to_string()),
            state: Some(state.to_string()),
            date: base + Duration::days(rng.gen_range(0..365)),
            title: String::new(),
            body,
            sentences: vec![],
        })?;
        articles.push(article);
        labels.push(AnnotationLabel {
            article_id: id,
            is_event,
            target,
            action,
            annotator_id: "synth".into(),
        });
    }

    let vectors = planted_vectors(cfg.embedding_dim, cfg.vector_seed);
    Ok(SyntheticCorpus {
        articles,
        labels,
        trigger_index,
        vectors,
        embedding_dim: cfg.embedding_dim,
    })
}

/// Word vectors for the synthetic vocabulary. Words of one class share a
/// direction, and all action words share one more, twice as long, as
/// related words do in pretrained vectors.
pub fn planted_vectors(dim: usize, vector_seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(vector_seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect() };
    let event_direction: Vec<f64> = draw(&mut rng).into_iter().map(|x| 2.0 * x).collect();
    let no_direction = vec![0.0; dim];
    let mut vectors: Vec<(String, Vec<f64>)> = FILLER.iter().map(|w| (w.to_string(), draw(&mut rng))).collect();
    for (words, shared) in [(&TARGET_WORDS[..], &no_direction), (&ACTION_WORDS[..], &event_direction)] {
        for class_words in words {
            let class_direction = draw(&mut rng);
            for w in class_words.iter() {
                let own = draw(&mut rng);
                let v = (0..dim).map(|k| shared[k] + class_direction[k] + 0.25 * own[k]).collect();
                vectors.push((w.to_string(), v));
            }
        }
    }
    vectors
}

/// Vectors in the whitespace-separated text format, six decimals.
pub fn vectors_text(vectors: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    for (token, values) in vectors {
        out.push_str(token);
        for v in values {
            let _ = write!(out, " {v:.6}");
        }
        out.push('\n');
    }
    out
}

const ON_TOPIC_TITLES: &[&str] = &[
    "Residents respond to hate incident reports",
    "Council debates religious freedom resolution",
    "Police log notes possible hate motive",
    "Community forum on racial equity",
    "Local groups speak out against hate",
];

const OFF_TOPIC_TITLES: &[&str] = &[
    "Library extends weekend hours",
    "Bridge repairs start next month",
    "Farmers market returns downtown",
];

/// Crime types of the coverage comparison, hate crime first.
pub const CRIME_TYPES: [&str; 3] = ["hate", "homicide", "kidnapping"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    /// Articles whose title matches the hate keyword list.
    pub n_on_topic: usize,
    /// On-topic articles reporting an incident.
    pub n_positive: usize,
    /// Extra positives re-reporting an earlier incident one day later.
    pub n_duplicates: usize,
    /// Articles no keyword matches.
    pub n_off_topic: usize,
    /// On-topic articles labeled by the first annotator.
    pub n_labeled: usize,
    /// Labeled articles also labeled by a second annotator.
    pub n_second_annotator: usize,
    /// Second-annotator labels whose event flag disagrees.
    pub n_disagreements: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            n_on_topic: 150,
            n_positive: 50,
            n_duplicates: 6,
            n_off_topic: 15,
            n_labeled: 110,
            n_second_annotator: 40,
            n_disagreements: 4,
            embedding_dim: 50,
            seed: 2019,
        }
    }
}

/// Files of an end-to-end fixture, as text.
#[derive(Debug, Clone)]
pub struct Fixture {
    /// Raw articles, one JSON object per line.
    pub articles_jsonl: String,
    pub labels_jsonl: String,
    pub official_counts_csv: String,
    /// Predicted counts for the crime types other than hate crime.
    pub predicted_counts_csv: String,
    pub vectors: String,
    /// Planted truth for every generated article.
    pub truth: Vec<AnnotationLabel>,
}

impl Fixture {
    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        for (name, text) in [
            ("articles.jsonl", &self.articles_jsonl),
            ("labels.jsonl", &self.labels_jsonl),
            ("official_counts.csv", &self.official_counts_csv),
            ("predicted_counts.csv", &self.predicted_counts_csv),
            ("vectors.txt", &self.vectors),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| crate::Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("fixture records serialize") + "\n")
        .collect()
}

/// Generates the end-to-end fixture: keyword-matching and off-topic
/// articles, labels from two annotators, and city-level counts for the
/// three crime types in ten cities.
pub fn fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    if cfg.n_positive > cfg.n_on_topic
        || cfg.n_labeled > cfg.n_on_topic
        || cfg.n_second_annotator > cfg.n_labeled
        || cfg.n_disagreements > cfg.n_second_annotator
        || cfg.n_duplicates > cfg.n_positive
    {
        return Err(crate::Error::InvalidInput(format!("inconsistent fixture settings {cfg:?}")));
    }
    let synth = SynthConfig {
        embedding_dim: cfg.embedding_dim,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");

    struct Draft {
        article: Article,
        truth: AnnotationLabel,
    }
    let mut drafts: Vec<Draft> = Vec::new();
    let make = |rng: &mut ChaCha8Rng, id: String, title: &str, planted, noise, city: (&str, &str), date| {
        let (sentences, _) = body_sentences(rng, &synth, planted, noise);
        let body = sentences.iter().map(|s| sentence_text(s)).collect::<Vec<_>>().join(" ");
        let truth = AnnotationLabel {
            article_id: id.clone(),
            is_event: planted.is_some(),
            target: planted.map(|p: (TargetClass, ActionClass)| p.0),
            action: planted.map(|p| p.1),
            annotator_id: "truth".into(),
        };
        Draft {
            article: Article {
                id,
                city: Some(city.0.to_string()),
                state: Some(city.1.to_string()),
                date,
                title: title.to_string(),
                body,
                sentences: vec![],
            },
            truth,
        }
    };

    let mut positive = vec![false; cfg.n_on_topic];
    positive[..cfg.n_positive].iter_mut().for_each(|p| *p = true);
    positive.shuffle(&mut rng);
    let mut n_pos = 0;
    for (i, &is_event) in positive.iter().enumerate() {
        let planted = is_event.then(|| {
            let classes = (
                TargetClass::ALL[n_pos % TargetClass::ALL.len()],
                ActionClass::ALL[(n_pos / 2) % ActionClass::ALL.len()],
            );
            n_pos += 1;
            classes
        });
        let title = *ON_TOPIC_TITLES.choose(&mut rng).unwrap();
        let city = CITIES[rng.gen_range(0..CITIES.len())];
        let date = base + Duration::days(rng.gen_range(0..365));
        drafts.push(make(&mut rng, format!("art-{i:04}"), title, planted, true, city, date));
    }
    let originals: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].truth.is_event).take(cfg.n_duplicates).collect();
    for (k, &i) in originals.iter().enumerate() {
        let (a, t) = (&drafts[i].article, &drafts[i].truth);
        let planted = Some((t.target.unwrap(), t.action.unwrap()));
        let city = (a.city.clone().unwrap(), a.state.clone().unwrap());
        let date = a.date + Duration::days(1);
        let title = *ON_TOPIC_TITLES.choose(&mut rng).unwrap();
        drafts.push(make(&mut rng, format!("dup-{k:04}"), title, planted, false, (city.0.as_str(), city.1.as_str()), date));
    }
    for k in 0..cfg.n_off_topic {
        let title = *OFF_TOPIC_TITLES.choose(&mut rng).unwrap();
        let city = CITIES[rng.gen_range(0..CITIES.len())];
        let date = base + Duration::days(rng.gen_range(0..365));
        drafts.push(make(&mut rng, format!("off-{k:04}"), title, None, false, city, date));
    }

    // the first annotator labels `n_labeled` on-topic articles, chosen so
    // that negatives outnumber positives; duplicates stay unlabeled
    let mut order: Vec<usize> = (0..cfg.n_on_topic).collect();
    order.shuffle(&mut rng);
    let labeled: Vec<usize> = order[..cfg.n_labeled].to_vec();
    let mut labels = Vec::new();
    for &i in &labeled {
        labels.push(AnnotationLabel {
            annotator_id: "ann1".into(),
            ..drafts[i].truth.clone()
        });
    }
    for (n, &i) in labeled[..cfg.n_second_annotator].iter().enumerate() {
        let mut l = AnnotationLabel {
            annotator_id: "ann2".into(),
            ..drafts[i].truth.clone()
        };
        if n < cfg.n_disagreements {
            l.is_event = !l.is_event;
            if l.is_event {
                l.target = Some(TargetClass::Race);
                l.action = Some(ActionClass::Vandalism);
            } else {
                l.target = None;
                l.action = None;
            }
        }
        labels.push(l);
    }

    let mut official = CountTable::default();
    let mut predicted = CountTable::default();
    for (city, state) in CITIES {
        official.add(city, state, "hate", rng.gen_range(1..=4));
        let homicide = rng.gen_range(4..=12);
        official.add(city, state, "homicide", homicide);
        predicted.add(city, state, "homicide", (homicide as f64 * rng.gen_range(0.3..0.9)).round() as u64);
        let kidnapping = rng.gen_range(1..=5);
        official.add(city, state, "kidnapping", kidnapping);
        predicted.add(city, state, "kidnapping", (kidnapping as f64 * rng.gen_range(0.8..2.0)).round() as u64);
    }

    let articles: Vec<&Article> = drafts.iter().map(|d| &d.article).collect();
    Ok(Fixture {
        articles_jsonl: jsonl(&articles),
        labels_jsonl: jsonl(&labels),
        official_counts_csv: official.to_csv(),
        predicted_counts_csv: predicted.to_csv(),
        vectors: vectors_text(&planted_vectors(cfg.embedding_dim, cfg.seed)),
        truth: drafts.into_iter().map(|d| d.truth).collect(),
    })
}

/// `n_records` incidents among which exactly `n_pairs` disjoint pairs are
/// duplicates (same place and classes, dates one day apart) and no other
/// pair is.
pub fn dedup_fixture(n_records: usize, n_pairs: usize, seed: u64) -> Result<Vec<IncidentRecord>> {
    if 2 * n_pairs > n_records {
        return Err(crate::Error::InvalidInput("more pairs than records allow".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    let n_unique = n_records - n_pairs;
    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_unique {
        let (city, state) = CITIES[rng.gen_range(0..CITIES.len())];
        records.push(IncidentRecord {
            article_id: format!("inc-{i:04}"),
            city: city.to_string(),
            state: state.to_string(),
            // three days between consecutive incidents keeps unrelated
            // records out of each other's window
            date: base + Duration::days(3 * i as i64),
            target: *TargetClass::ALL.choose(&mut rng).unwrap(),
            action: *ActionClass::ALL.choose(&mut rng).unwrap(),
        });
    }
    let mut originals: Vec<usize> = (0..n_unique).collect();
    originals.shuffle(&mut rng);
    for (k, &i) in originals[..n_pairs].iter().enumerate() {
        let mut copy = records[i].clone();
        copy.article_id = format!("dup-{k:04}");
        copy.date += Duration::days(1);
        copy.city = copy.city.to_uppercase();
        records.push(copy);
    }
    records.shuffle(&mut rng);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gold_labels, ingest_str, parse_labels, IngestOptions};
    use crate::dedup::find_duplicates;

    #[test]
    fn dedup_fixture_has_planted_pairs() {
        let records = dedup_fixture(678, 20, 5).unwrap();
        let report = find_duplicates(&records).unwrap();
        assert_eq!(report.pairs.len(), 20);
        assert_eq!(report.unique_count, 658);
    }

    #[test]
    fn fixture_shape() {
        let cfg = FixtureConfig::default();
        let f = fixture(&cfg).unwrap();
        let articles = ingest_str(&f.articles_jsonl, IngestOptions { strict: true }).unwrap().articles;
        assert_eq!(articles.len(), cfg.n_on_topic + cfg.n_duplicates + cfg.n_off_topic);
        let labels = parse_labels(&f.labels_jsonl).unwrap();
        assert_eq!(labels.len(), cfg.n_labeled + cfg.n_second_annotator);
        let gold = gold_labels(&labels);
        let positives = gold.values().filter(|l| l.is_event).count();
        assert!(positives < gold.len() - positives);
        assert_eq!(CountTable::parse_csv(&f.official_counts_csv).unwrap().len(), 30);
        assert_eq!(CountTable::parse_csv(&f.predicted_counts_csv).unwrap().len(), 20);
    }

    #[test]
    fn trigger_sentence_holds_planted_words() {
        let c = planted_corpus(&SynthConfig {
            embedding_dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(c.articles.len(), 50);
        assert_eq!(c.labels.iter().filter(|l| l.is_event).count(), 25);
        for (a, l) in c.articles.iter().zip(&c.labels) {
            let has_action = |s: &Vec<String>| ACTION_WORDS.iter().flat_map(|w| w.iter()).any(|w| s.iter().any(|t| t == w));
            if l.is_event {
                let at = c.trigger_index[&a.id];
                let trig = &a.sentences[at];
                assert!(ACTION_WORDS[l.action.unwrap().index()].iter().any(|w| trig.iter().any(|t| t == w)));
                assert!(TARGET_WORDS[l.target.unwrap().index()].iter().any(|w| trig.iter().any(|t| t == w)));
                assert_eq!(a.sentences.iter().filter(|s| has_action(s)).count(), 1);
            } else {
                assert!(!a.sentences.iter().any(has_action));
            }
        }
        let emb = c.embeddings().unwrap();
        assert_eq!(emb.rows_from_file(), emb.len() - 1);
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig {
            embedding_dim: 4,
            ..SynthConfig::default()
        };
        let a = planted_corpus(&cfg).unwrap();
        let b = planted_corpus(&cfg).unwrap();
        assert_eq!(a.articles, b.articles);
        assert_eq!(a.vectors_text(), b.vectors_text());
        let c = planted_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.articles, c.articles);
    }
}
