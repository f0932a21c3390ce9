pub mod active;
pub mod corpus;
pub mod dedup;
pub mod error;
pub mod extractor;
pub mod metrics;
pub mod mil;
pub mod stats;
pub mod synth;
pub mod tfidf;

pub use error::{Error, Result};
