use std::path::{Path, PathBuf};

use anyhow::Context as _;
use newswatch::active::SamplerConfig;
use newswatch::corpus::KeywordSet;
use newswatch::extractor::ExtractorConfig;
use newswatch::mil::MilConfig;
use newswatch::tfidf::LinearConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub articles: PathBuf,
    pub labels: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub official_counts: Option<PathBuf>,
    /// Predicted incident counts for crime types without an extraction
    /// model, in the official-counts CSV format.
    pub predicted_counts: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            articles: "articles.jsonl".into(),
            labels: "labels.jsonl".into(),
            embeddings: None,
            official_counts: None,
            predicted_counts: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Crime types compared; the first is the one produced by the
    /// extraction pipeline.
    pub crime_types: Vec<String>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            crime_types: vec!["hate".into(), "homicide".into(), "kidnapping".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    /// `hate`, `homicide`, `kidnapping`, or a comma-separated word list.
    pub keywords: String,
    pub split: SplitRatios,
    pub detector: MilConfig,
    pub extractor: ExtractorConfig,
    pub sampler: SamplerConfig,
    pub baseline: LinearConfig,
    pub stats: StatsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            keywords: "hate".into(),
            split: SplitRatios::default(),
            detector: MilConfig::default(),
            extractor: ExtractorConfig::default(),
            sampler: SamplerConfig::default(),
            baseline: LinearConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads the config at `path` (or the defaults), resolves relative paths
    /// against the config file's directory, and applies the seed override.
    /// Component seeds are derived from the pipeline seed.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<Self> {
        let (mut config, base) = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (config, base)
            }
            None => (Self::default(), PathBuf::new()),
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.resolve(&base);
        config.detector.seed = config.seed;
        config.extractor.seed = config.seed.wrapping_add(1);
        config.sampler.seed = config.seed.wrapping_add(2);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.articles);
        fix(&mut paths.labels);
        fix(&mut paths.output_dir);
        for p in [&mut paths.embeddings, &mut paths.official_counts, &mut paths.predicted_counts].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.detector.validate()?;
        self.extractor.validate()?;
        self.sampler.validate()?;
        KeywordSet::preset(&self.keywords)?;
        if self.detector.embedding_dim != self.extractor.embedding_dim {
            anyhow::bail!(
                "detector and extractor embedding dimensions differ ({} vs {})",
                self.detector.embedding_dim,
                self.extractor.embedding_dim
            );
        }
        if self.stats.crime_types.len() < 2 {
            anyhow::bail!("stats.crime_types needs at least two crime types");
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 4, "paths": {"articles": "a.jsonl", "output_dir": "/abs/out"}}"#).unwrap();
        let c = PipelineConfig::load(Some(&path), None).unwrap();
        assert_eq!(c.paths.articles, dir.path().join("a.jsonl"));
        assert_eq!(c.paths.output_dir, PathBuf::from("/abs/out"));
        assert_eq!((c.detector.seed, c.extractor.seed, c.sampler.seed), (4, 5, 6));
        let c = PipelineConfig::load(Some(&path), Some(9)).unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"sed": 4}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path), None).is_err());
        std::fs::write(&path, r#"{"detector": {"k": 0}}"#).unwrap();
        assert!(PipelineConfig::load(Some(&path), None).is_err());
    }
}
