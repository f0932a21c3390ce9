//! Collapsing reports of the same incident.
//!
//! Two incident records describe the same event when they share state,
//! city, target and action and their dates are at most one day apart.
//! Duplicates are grouped into connected components, so chains of
//! consecutive-day reports form one incident.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{ActionClass, Article, TargetClass};
use crate::error::{Error, Result};
use crate::extractor::ExtractionResult;
use crate::mil::DetectionResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub article_id: String,
    pub city: String,
    pub state: String,
    pub date: NaiveDate,
    pub target: TargetClass,
    pub action: ActionClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub pairs: Vec<(String, String)>,
    pub clusters: Vec<Vec<String>>,
    pub unique_count: usize,
}

/// Lowercased with runs of whitespace collapsed to one space.
pub fn normalize_place(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// The duplicate predicate for one pair of records.
pub fn is_duplicate(a: &IncidentRecord, b: &IncidentRecord) -> bool {
    a.target == b.target
        && a.action == b.action
        && (a.date - b.date).num_days().abs() <= 1
        && normalize_place(&a.state) == normalize_place(&b.state)
        && normalize_place(&a.city) == normalize_place(&b.city)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // the smaller index becomes the root so results do not depend on
            // the order edges are visited
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Finds every duplicate pair and the resulting incident clusters.
///
/// Records are bucketed by place and classes, and compared only within a
/// bucket. Pairs are reported in input order `(earlier, later)`, sorted by
/// the earlier record's position; clusters are listed by their first
/// member, members in input order.
pub fn find_duplicates(records: &[IncidentRecord]) -> Result<DedupReport> {
    let mut seen = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if seen.insert(r.article_id.as_str(), i).is_some() {
            return Err(Error::InvalidInput(format!("incident {} listed twice", r.article_id)));
        }
    }
    let mut buckets: HashMap<(String, String, TargetClass, ActionClass), Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        buckets
            .entry((normalize_place(&r.state), normalize_place(&r.city), r.target, r.action))
            .or_default()
            .push(i);
    }
    let mut edges = Vec::new();
    for members in buckets.values() {
        let mut by_date = members.clone();
        by_date.sort_by_key(|&i| (records[i].date, i));
        for (pos, &i) in by_date.iter().enumerate() {
            for &j in &by_date[pos + 1..] {
                if (records[j].date - records[i].date).num_days() > 1 {
                    break;
                }
                edges.push((i.min(j), i.max(j)));
            }
        }
    }
    edges.sort_unstable();

    let mut sets = DisjointSet::new(records.len());
    for &(i, j) in &edges {
        sets.union(i, j);
    }
    let mut clusters: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..records.len() {
        let root = sets.find(i);
        clusters.entry(root).or_default().push(records[i].article_id.clone());
    }
    let clusters: Vec<Vec<String>> = clusters.into_values().collect();
    Ok(DedupReport {
        pairs: edges
            .into_iter()
            .map(|(i, j)| (records[i].article_id.clone(), records[j].article_id.clone()))
            .collect(),
        unique_count: clusters.len(),
        clusters,
    })
}

/// A positive article that could not become an incident record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedIncident {
    pub article_id: String,
    pub reason: String,
}

/// One record per positively predicted article, located by the article's
/// city and state. Articles without a location are skipped and reported.
pub fn incidents_from_predictions(
    detections: &[DetectionResult],
    extractions: &[ExtractionResult],
    articles: &[Article],
) -> Result<(Vec<IncidentRecord>, Vec<SkippedIncident>)> {
    let extractions: HashMap<&str, &ExtractionResult> = extractions.iter().map(|e| (e.article_id.as_str(), e)).collect();
    let articles: HashMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for d in detections.iter().filter(|d| d.predicted) {
        let extraction = extractions
            .get(d.article_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("positive article {} has no extraction", d.article_id)))?;
        let article = articles
            .get(d.article_id.as_str())
            .ok_or_else(|| Error::UnknownArticle(d.article_id.clone()))?;
        let Some((city, state)) = article.location() else {
            tracing::warn!(article_id = %d.article_id, "positive article lacks city or state; skipped");
            skipped.push(SkippedIncident {
                article_id: d.article_id.clone(),
                reason: "missing city or state".into(),
            });
            continue;
        };
        records.push(IncidentRecord {
            article_id: d.article_id.clone(),
            city: city.to_string(),
            state: state.to_string(),
            date: article.date,
            target: extraction.target,
            action: extraction.action,
        });
    }
    Ok((records, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, city: &str, day: u32) -> IncidentRecord {
        IncidentRecord {
            article_id: id.into(),
            city: city.into(),
            state: "OR".into(),
            date: NaiveDate::from_ymd_opt(2018, 3, day).unwrap(),
            target: TargetClass::Religion,
            action: ActionClass::Vandalism,
        }
    }

    #[test]
    fn empty_input() {
        let r = find_duplicates(&[]).unwrap();
        assert!(r.pairs.is_empty() && r.clusters.is_empty());
        assert_eq!(r.unique_count, 0);
    }

    #[test]
    fn chains_form_one_cluster() {
        let records = [rec("a", "Portland", 1), rec("b", "Portland", 2), rec("c", "Portland", 3)];
        let r = find_duplicates(&records).unwrap();
        assert_eq!(r.pairs, vec![("a".into(), "b".into()), ("b".into(), "c".into())]);
        assert_eq!(r.unique_count, 1);
        assert_eq!(r.clusters, vec![vec!["a".to_string(), "b".into(), "c".into()]]);
    }

    #[test]
    fn place_matching_ignores_case_and_spacing() {
        let mut b = rec("b", "  lake   OSWEGO ", 4);
        b.state = "or".into();
        let r = find_duplicates(&[rec("a", "Lake Oswego", 5), b]).unwrap();
        assert_eq!(r.unique_count, 1);
    }

    #[test]
    fn any_differing_field_separates() {
        let base = rec("a", "Portland", 10);
        let mut others = vec![rec("b", "Salem", 10), rec("c", "Portland", 12)];
        let mut d = rec("d", "Portland", 10);
        d.target = TargetClass::Race;
        let mut e = rec("e", "Portland", 10);
        e.action = ActionClass::Arson;
        let mut f = rec("f", "Portland", 10);
        f.state = "ME".into();
        others.extend([d, e, f]);
        for o in &others {
            assert!(!is_duplicate(&base, o), "{}", o.article_id);
        }
        let mut all = vec![base];
        all.extend(others);
        assert_eq!(find_duplicates(&all).unwrap().unique_count, 6);
    }

    #[test]
    fn repeated_ids_are_rejected() {
        assert!(find_duplicates(&[rec("a", "X", 1), rec("a", "Y", 1)]).is_err());
    }
}
