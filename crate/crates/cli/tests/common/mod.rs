#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FIXTURE_FILES: &[&str] = &[
    "articles.jsonl",
    "labels.jsonl",
    "official_counts.csv",
    "predicted_counts.csv",
    "vectors.txt",
    "pipeline.json",
];

pub const PIPELINE: &[&str] = &[
    "ingest",
    "filter",
    "split",
    "train-detector",
    "train-extractor",
    "train-baseline",
    "predict",
    "extract",
    "al-sample",
    "dedupe",
    "stats",
    "kappa",
];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Copies the shipped fixture into a fresh directory; the config's output
/// directory is `out` inside it.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in FIXTURE_FILES {
        std::fs::copy(fixture_dir().join(name), dir.path().join(name)).unwrap();
    }
    dir
}

pub fn config_path(dir: &Path) -> PathBuf {
    dir.join("pipeline.json")
}

/// Rewrites the config with `edit` applied to its JSON.
pub fn edit_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let path = config_path(dir);
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut value);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

pub fn newswatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_newswatch"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

/// Runs one subcommand against the workspace config and insists it succeeds.
pub fn step(dir: &Path, command: &str) -> Output {
    let config = config_path(dir);
    let out = newswatch(&[command, "--config", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{command} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn run_pipeline(dir: &Path) {
    for command in PIPELINE {
        step(dir, command);
    }
}

/// Every file under `root`, keyed by relative path. Manifests lose their
/// timestamps so two runs can be compared byte for byte.
pub fn snapshot(root: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = std::fs::read(&path).unwrap();
            if path.parent().is_some_and(|p| p.ends_with("manifests")) {
                let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let obj = value.as_object_mut().unwrap();
                obj.remove("started_at");
                obj.remove("finished_at");
                bytes = serde_json::to_vec(&value).unwrap();
            }
            files.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
        }
    }
    files
}
