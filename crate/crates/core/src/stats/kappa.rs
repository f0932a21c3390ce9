use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotationLabel;
use crate::error::{Error, Result};

/// Cohen's kappa for two paired label sequences.
///
/// When chance agreement is 1 (both annotators used one and the same
/// label throughout) kappa is reported as 1.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("label lists differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("kappa needs at least one labeled pair".into()));
    }
    let n = a.len() as f64;
    let mut agree = 0usize;
    let mut marg_a: BTreeMap<&T, usize> = BTreeMap::new();
    let mut marg_b: BTreeMap<&T, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        if x == y {
            agree += 1;
        }
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .map(|(k, &ca)| ca as f64 * marg_b.get(k).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        if p_o < 1.0 {
            tracing::warn!("chance agreement is 1 but observed agreement is not; kappa set to 0");
            return Ok(0.0);
        }
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementField {
    IsEvent,
    Target,
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub field: AgreementField,
    pub annotator_a: String,
    pub annotator_b: String,
    pub pairs: usize,
    pub kappa: f64,
}

/// Kappa between two annotators over the articles both labeled. The
/// latest record per (article, annotator) counts. Target and action
/// agreement use only articles both marked as events.
pub fn annotator_agreement(labels: &[AnnotationLabel], annotator_a: &str, annotator_b: &str, field: AgreementField) -> Result<Agreement> {
    let latest = |who: &str| -> HashMap<&str, &AnnotationLabel> {
        labels
            .iter()
            .filter(|l| l.annotator_id == who)
            .map(|l| (l.article_id.as_str(), l))
            .collect()
    };
    let la = latest(annotator_a);
    let lb = latest(annotator_b);
    let mut ids: Vec<&str> = la.keys().filter(|id| lb.contains_key(*id)).copied().collect();
    ids.sort_unstable();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for id in ids {
        let (x, y) = (la[id], lb[id]);
        let pair = match field {
            AgreementField::IsEvent => Some((x.is_event.to_string(), y.is_event.to_string())),
            AgreementField::Target => x.target.zip(y.target).map(|(p, q)| (p.to_string(), q.to_string())),
            AgreementField::Action => x.action.zip(y.action).map(|(p, q)| (p.to_string(), q.to_string())),
        };
        if let Some((p, q)) = pair {
            xs.push(p);
            ys.push(q);
        }
    }
    Ok(Agreement {
        field,
        annotator_a: annotator_a.to_string(),
        annotator_b: annotator_b.to_string(),
        pairs: xs.len(),
        kappa: cohen_kappa(&xs, &ys)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ActionClass, TargetClass};

    #[test]
    fn identical_lists() {
        assert_eq!(cohen_kappa(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&["x", "x"], &["x", "x"]).unwrap(), 1.0);
    }

    #[test]
    fn two_by_two_table() {
        // [[45, 5], [10, 10]]: p_o = 55/70, p_e = (50*55 + 20*15)/70^2
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (x, y, n) in [(1, 1, 45), (1, 0, 5), (0, 1, 10), (0, 0, 10)] {
            for _ in 0..n {
                a.push(x);
                b.push(y);
            }
        }
        let k = cohen_kappa(&a, &b).unwrap();
        assert!((k - 16.0 / 37.0).abs() < 1e-15);
    }

    #[test]
    fn total_disagreement_is_negative() {
        assert_eq!(cohen_kappa(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), -1.0);
        assert!(cohen_kappa::<u8>(&[], &[]).is_err());
        assert!(cohen_kappa(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn agreement_between_annotators() {
        let l = |id: &str, who: &str, ev: bool| AnnotationLabel {
            article_id: id.into(),
            is_event: ev,
            target: ev.then_some(TargetClass::Race),
            action: ev.then_some(ActionClass::Assault),
            annotator_id: who.into(),
        };
        let labels = vec![
            l("1", "a", true),
            l("1", "b", true),
            l("2", "a", false),
            l("2", "b", false),
            l("3", "a", true),
            l("4", "b", true),
        ];
        let ag = annotator_agreement(&labels, "a", "b", AgreementField::IsEvent).unwrap();
        assert_eq!((ag.pairs, ag.kappa), (2, 1.0));
        let t = annotator_agreement(&labels, "a", "b", AgreementField::Target).unwrap();
        assert_eq!(t.pairs, 1);
        assert!(annotator_agreement(&labels, "a", "c", AgreementField::IsEvent).is_err());
    }
}
