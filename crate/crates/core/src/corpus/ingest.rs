use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Article;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Fail on the first malformed line instead of recording it.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub articles: Vec<Article>,
    pub errors: Vec<LineError>,
}

/// Reads one JSON article per line. Blank lines are skipped; line numbers
/// are 1-based.
pub fn ingest(path: impl AsRef<Path>, options: IngestOptions) -> Result<IngestReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, options)
}

pub fn ingest_str(text: &str, options: IngestOptions) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match parse_article(raw) {
            Ok(article) => {
                if !seen.insert(article.id.clone()) {
                    return Err(Error::DuplicateId { id: article.id, line });
                }
                report.articles.push(article);
            }
            Err(message) if options.strict => return Err(Error::Malformed { line, message }),
            Err(message) => report.errors.push(LineError { line, message }),
        }
    }
    Ok(report)
}

fn parse_article(raw: &str) -> std::result::Result<Article, String> {
    let mut article: Article = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    if article.id.trim().is_empty() {
        return Err("empty `id`".into());
    }
    if let Some(state) = article.state.as_mut() {
        let trimmed = state.trim();
        if !trimmed.is_empty() {
            if trimmed.len() != 2 || !trimmed.chars().all(|c| c.is_ascii_alphabetic()) {
                return Err(format!("`state` must be a two-letter code, got `{trimmed}`"));
            }
            *state = trimmed.to_ascii_uppercase();
        }
    }
    Ok(article)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"id":"a1","city":"Springfield","state":"il","date":"2017-03-01","title":"T1","body":"One."}
{"id":"a2","city":"Shelbyville","state":"IL","date":"2017-03-02","title":"T2","body":"Two."}
{"id":"a3","city":null,"state":null,"date":"2017-03-03","title":"T3","body":"Three."}
"#;

    #[test]
    fn reads_articles_in_order() {
        let report = ingest_str(THREE, IngestOptions::default()).unwrap();
        let ids: Vec<_> = report.articles.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2", "a3"]);
        assert!(report.errors.is_empty());
        assert_eq!(report.articles[0].state.as_deref(), Some("IL"));
        assert!(report.articles[2].location().is_none());
    }

    #[test]
    fn missing_date_is_reported_with_line_number() {
        let text = "{\"id\":\"a1\",\"date\":\"2017-01-01\",\"body\":\"x\"}\n{\"id\":\"a2\",\"body\":\"y\"}\n";
        let report = ingest_str(text, IngestOptions::default()).unwrap();
        assert_eq!(report.articles.len(), 1);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line, 2);
        assert!(report.errors[0].message.contains("date"), "{}", report.errors[0].message);

        let strict = ingest_str(text, IngestOptions { strict: true });
        assert!(matches!(strict, Err(Error::Malformed { line: 2, .. })));
    }

    #[test]
    fn bad_date_and_state_are_errors() {
        let text = "{\"id\":\"a1\",\"date\":\"2017-02-30\",\"body\":\"x\"}\n{\"id\":\"a2\",\"state\":\"Ill\",\"date\":\"2017-01-01\",\"body\":\"x\"}\nnot json\n";
        let report = ingest_str(text, IngestOptions::default()).unwrap();
        let lines: Vec<_> = report.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, [1, 2, 3]);
    }

    #[test]
    fn empty_input_yields_nothing() {
        let report = ingest_str("", IngestOptions::default()).unwrap();
        assert!(report.articles.is_empty() && report.errors.is_empty());
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let text = "{\"id\":\"a\",\"date\":\"2017-01-01\",\"body\":\"x\"}\n{\"id\":\"a\",\"date\":\"2017-01-02\",\"body\":\"y\"}\n";
        assert!(matches!(
            ingest_str(text, IngestOptions::default()),
            Err(Error::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(
            ingest("/nonexistent/articles.jsonl", IngestOptions::default()),
            Err(Error::Io { .. })
        ));
    }
}
