//! Experiment runner: JSON config in, JSONL records, CSV summaries, traces
//! and fitted models out.

pub mod config;
pub mod diag;
pub mod runner;

use std::path::{Path, PathBuf};

use dal_core::solvers::Variant;
use serde_json::json;

pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
pub use runner::{run_experiment, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(dal_core::Error),
    #[error("run {variant}/seed {seed}: {source}")]
    Run {
        variant: Variant,
        seed: u64,
        #[source]
        source: dal_core::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no run artifacts in {0}")]
    NoArtifacts(PathBuf),
    #[error("bad artifact: {0}")]
    Artifact(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    /// Structured form written to `error.json`.
    pub fn report(&self) -> serde_json::Value {
        let (variant, seed, task) = match self {
            CliError::Run { variant, seed, source } => {
                let task = match source {
                    dal_core::Error::AtTask { task, .. } => Some(*task),
                    _ => None,
                };
                (Some(variant.name()), Some(*seed), task)
            }
            _ => (None, None, None),
        };
        json!({
            "status": "failed",
            "exit_code": self.exit_code(),
            "variant": variant,
            "seed": seed,
            "task": task,
            "message": self.to_string(),
        })
    }
}
