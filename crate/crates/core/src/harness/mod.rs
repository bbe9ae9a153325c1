//! Config loading, presets, metrics export and run comparison.

mod compare;
mod config;
pub mod metrics;
pub mod presets;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use compare::{compare, read_curves, summary_path, CompareRow, Comparison, Curves};
pub use config::{load_config, merge, ExperimentConfig, Overrides};
pub use metrics::{Summary, COLUMNS};
pub use presets::{preset, PRESETS};

use crate::engine::{self, EngineError, RunOutput};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "HDET_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown preset `{name}` (known: {known})")]
    UnknownPreset { name: String, known: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("compare: {0}")]
    Compare(String),
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub output: RunOutput,
    pub summary: Summary,
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Runs the engine and writes `<name>.csv` and `<name>.summary`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let output = engine::run(&cfg.run)?;
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(format!("{}.csv", cfg.name));
    metrics::write_metrics(&output, BufWriter::new(File::create(&metrics_path)?))?;
    let summary = Summary::from_run(&cfg.name, cfg.preset.as_deref(), &output);
    let summary_path = summary_path(&metrics_path);
    summary.write(&summary_path)?;
    Ok(ExperimentReport { output, summary, metrics_path, summary_path })
}
