use serde::{Deserialize, Serialize};

use super::{word_tokens, Article};
use crate::error::{Error, Result};

/// Lowercase keywords matched against whole tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet(Vec<String>);

impl KeywordSet {
    /// Keywords are trimmed, lowercased and de-duplicated in first-seen order.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if !w.is_empty() && !out.contains(&w) {
                out.push(w);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyKeywordSet);
        }
        Ok(Self(out))
    }

    pub fn hate() -> Self {
        Self::fixed(&[
            "swastika",
            "hate",
            "racial",
            "religion",
            "religious",
            "gay",
            "transgender",
            "transsexual",
        ])
    }

    pub fn homicide() -> Self {
        Self::fixed(&["homicide", "manslaughter", "murder", "kill"])
    }

    /// The published list names "abduct" twice; it is kept once here.
    pub fn kidnapping() -> Self {
        Self::fixed(&["kidnapping", "abduct", "hostage", "shanghai"])
    }

    /// `hate`, `homicide`, `kidnapping`, or a comma-separated custom list.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "hate" => Ok(Self::hate()),
            "homicide" => Ok(Self::homicide()),
            "kidnapping" => Ok(Self::kidnapping()),
            custom => Self::new(custom.split(',')),
        }
    }

    fn fixed(words: &[&str]) -> Self {
        Self(words.iter().map(|w| w.to_string()).collect())
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn union(&self, other: &KeywordSet) -> KeywordSet {
        let mut words = self.0.clone();
        words.extend(other.0.iter().filter(|w| !self.0.contains(w)).cloned());
        KeywordSet(words)
    }

    /// Whether any title or body token equals a keyword.
    pub fn matches(&self, article: &Article) -> bool {
        let hit = |t: &String| self.0.iter().any(|k| k == t);
        article.sentences.iter().flatten().any(hit) || word_tokens(&article.title).iter().any(hit)
    }
}

/// Articles containing at least one keyword as a whole token, in input order.
pub fn keyword_filter(articles: &[Article], keywords: &KeywordSet) -> Result<Vec<Article>> {
    if keywords.is_empty() {
        return Err(Error::EmptyKeywordSet);
    }
    let mut out = Vec::new();
    for a in articles {
        if !a.is_tokenized() {
            return Err(Error::Untokenized(a.id.clone()));
        }
        if keywords.matches(a) {
            out.push(a.clone());
        }
    }
    Ok(out)
}
