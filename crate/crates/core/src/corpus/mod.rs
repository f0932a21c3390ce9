//! Article and annotation types, ingestion, tokenization, keyword filtering,
//! train/dev/test splitting and word-vector loading.

mod embeddings;
mod ingest;
mod keywords;
mod labels;
mod split;
mod tokenize;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use embeddings::{load_embeddings, oov_vector, read_embeddings, EmbeddingTable, UNK_TOKEN};
pub use ingest::{ingest, ingest_str, IngestOptions, IngestReport, LineError};
pub use keywords::{keyword_filter, KeywordSet};
pub use labels::{gold_labels, load_labels, parse_labels, write_jsonl, LabeledArticle};
pub use split::{split, CorpusSplit, SplitIds};
pub use tokenize::{split_sentences, tokenize, word_tokens};

/// Sentences beyond this count are ignored by the models.
pub const MAX_SENTENCES: usize = 60;
/// Tokens beyond this count within one sentence are ignored by the models.
pub const MAX_TOKENS_PER_SENTENCE: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    #[serde(default)]
    pub city: Option<String>,
    #[serde(default)]
    pub state: Option<String>,
    pub date: NaiveDate,
    #[serde(default)]
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sentences: Vec<Vec<String>>,
}

impl Article {
    pub fn is_tokenized(&self) -> bool {
        !self.sentences.is_empty()
    }

    /// Sentences as seen by the models, truncated to [`MAX_SENTENCES`] and
    /// [`MAX_TOKENS_PER_SENTENCE`].
    pub fn model_sentences(&self) -> impl Iterator<Item = &[String]> {
        self.sentences
            .iter()
            .take(MAX_SENTENCES)
            .map(|s| &s[..s.len().min(MAX_TOKENS_PER_SENTENCE)])
    }

    /// City and state when both are present and non-blank.
    pub fn location(&self) -> Option<(&str, &str)> {
        let city = self.city.as_deref().map(str::trim).filter(|c| !c.is_empty())?;
        let state = self.state.as_deref().map(str::trim).filter(|s| !s.is_empty())?;
        Some((city, state))
    }
}

macro_rules! closed_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            /// Every variant in declaration order.
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($name))),
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_enum! {
    /// Social group targeted by an incident.
    TargetClass {
        Race => "race",
        Nationality => "nationality",
        Gender => "gender",
        Religion => "religion",
        SexualOrientation => "sexual_orientation",
        Ideology => "ideology",
        PoliticalIdentification => "political_identification",
        MentalPhysicalHealth => "mental_physical_health",
    }
}

closed_enum! {
    /// Kind of act reported.
    ActionClass {
        Assault => "assault",
        Arson => "arson",
        Vandalism => "vandalism",
        HateDemonstration => "hate_demonstration",
    }
}

/// One annotator's judgement of one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLabel {
    pub article_id: String,
    pub is_event: bool,
    #[serde(default)]
    pub target: Option<TargetClass>,
    #[serde(default)]
    pub action: Option<ActionClass>,
    pub annotator_id: String,
}

impl AnnotationLabel {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |message: &str| crate::Error::InvalidLabel {
            id: self.article_id.clone(),
            message: message.to_string(),
        };
        if self.article_id.is_empty() {
            return Err(bad("empty article_id"));
        }
        if self.annotator_id.is_empty() {
            return Err(bad("empty annotator_id"));
        }
        if !self.is_event && (self.target.is_some() || self.action.is_some()) {
            return Err(bad("target/action given for a non-event"));
        }
        Ok(())
    }
}
