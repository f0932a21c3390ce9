use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{AnnotationLabel, Article};
use crate::error::{Error, Result};

/// An article paired with its consolidated gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledArticle {
    pub article: Article,
    pub label: AnnotationLabel,
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<AnnotationLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<AnnotationLabel>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let label: AnnotationLabel = serde_json::from_str(raw).map_err(|e| Error::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        label.validate().map_err(|e| Error::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(label);
    }
    Ok(out)
}

/// One JSON document per line, newline-terminated.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Collapses multiple annotations per article into one gold label: the
/// majority `is_event` vote wins, ties go to the earliest record, and the
/// attributes come from the earliest record that agrees with the majority.
pub fn gold_labels(labels: &[AnnotationLabel]) -> BTreeMap<String, AnnotationLabel> {
    let mut grouped: BTreeMap<&str, Vec<&AnnotationLabel>> = BTreeMap::new();
    for l in labels {
        grouped.entry(l.article_id.as_str()).or_default().push(l);
    }
    grouped
        .into_iter()
        .map(|(id, group)| {
            let yes = group.iter().filter(|l| l.is_event).count();
            let no = group.len() - yes;
            let verdict = match yes.cmp(&no) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => group[0].is_event,
            };
            let chosen = group
                .iter()
                .find(|l| l.is_event == verdict)
                .expect("majority side is non-empty");
            (id.to_string(), (*chosen).clone())
        })
        .collect()
}
