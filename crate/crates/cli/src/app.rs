//! Argument parsing, logging setup, manifests and exit codes.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome};
use crate::config::PipelineConfig;
use crate::manifest::{file_record, RunManifest};
use crate::service::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(name = "newswatch", version, about = "Crime-event detection pipeline over local news")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read raw articles, tokenize them, and record malformed lines.
    Ingest,
    /// Keep articles that contain a keyword.
    Filter {
        /// `hate`, `homicide`, `kidnapping`, or a comma-separated list.
        #[arg(long)]
        keywords: Option<String>,
    },
    /// Partition the labeled articles into train, dev and test.
    Split,
    /// Train the sentence-level detector.
    TrainDetector,
    /// Train the target and action extractor.
    TrainExtractor,
    /// Train the TF-IDF logistic-regression baseline.
    TrainBaseline,
    /// Score every filtered article with the detector.
    Predict,
    /// Extract target and action for detected events.
    Extract,
    /// Draw uncertain articles into the annotation queue.
    AlSample {
        /// Queue size; defaults to the configured sample count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Turn detections into incidents and collapse duplicates.
    Dedupe,
    /// Compare predicted and official counts across crime types.
    Stats,
    /// Inter-annotator agreement.
    Kappa {
        #[arg(long, requires = "annotator_b")]
        annotator_a: Option<String>,
        #[arg(long, requires = "annotator_a")]
        annotator_b: Option<String>,
    },
    /// Serve the annotation API.
    Serve {
        /// Port; falls back to $PORT, then 8080.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Serve without a trained detector; every article scores 0.5.
        #[arg(long)]
        cold: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Filter { .. } => "filter",
            Command::Split => "split",
            Command::TrainDetector => "train-detector",
            Command::TrainExtractor => "train-extractor",
            Command::TrainBaseline => "train-baseline",
            Command::Predict => "predict",
            Command::Extract => "extract",
            Command::AlSample { .. } => "al-sample",
            Command::Dedupe => "dedupe",
            Command::Stats => "stats",
            Command::Kappa { .. } => "kappa",
            Command::Serve { .. } => "serve",
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .try_init();
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            tracing::error!(error = %format!("{e:#}"), "command failed");
            EXIT_DATA
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = PipelineConfig::load(cli.common.config.as_deref(), cli.common.seed)?;
    let name = cli.command.name();
    let started_at = Utc::now();
    let outcome = match cli.command {
        Command::Serve { port, host, cold } => return serve(config, host, port, cold),
        Command::Ingest => commands::run_ingest(&config)?,
        Command::Filter { keywords } => commands::run_filter(&config, keywords.as_deref())?,
        Command::Split => commands::run_split(&config)?,
        Command::TrainDetector => commands::run_train_detector(&config)?,
        Command::TrainExtractor => commands::run_train_extractor(&config)?,
        Command::TrainBaseline => commands::run_train_baseline(&config)?,
        Command::Predict => commands::run_predict(&config)?,
        Command::Extract => commands::run_extract(&config)?,
        Command::AlSample { n } => commands::run_al_sample(&config, n)?,
        Command::Dedupe => commands::run_dedupe(&config)?,
        Command::Stats => commands::run_stats(&config)?,
        Command::Kappa {
            annotator_a,
            annotator_b,
        } => commands::run_kappa(&config, annotator_a.zip(annotator_b))?,
    };
    record(&config, name, started_at, &outcome)?;
    println!("{}", serde_json::to_string(&outcome.summary)?);
    Ok(())
}

fn record(config: &PipelineConfig, command: &str, started_at: chrono::DateTime<Utc>, outcome: &Outcome) -> anyhow::Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(config)?,
        inputs: outcome.inputs.iter().map(|p| file_record(p)).collect::<anyhow::Result<_>>()?,
        outputs: outcome.outputs.iter().map(|p| file_record(p)).collect::<anyhow::Result<_>>()?,
        started_at,
        finished_at: Utc::now(),
    };
    let path = manifest.write(&config.paths.output_dir)?;
    tracing::info!(command, manifest = %path.display(), outputs = outcome.outputs.len(), "run recorded");
    Ok(())
}

fn resolve_port(flag: Option<u16>) -> anyhow::Result<u16> {
    if let Some(port) = flag {
        return Ok(port);
    }
    match std::env::var("PORT") {
        Ok(text) => text.trim().parse().map_err(|_| anyhow::anyhow!("PORT `{text}` is not a valid port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

fn serve(config: PipelineConfig, host: std::net::IpAddr, port: Option<u16>, cold: bool) -> anyhow::Result<()> {
    let addr = SocketAddr::new(host, resolve_port(port)?);
    let state = AppState::load(config, cold)?;
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(service::serve(state, addr))
}
