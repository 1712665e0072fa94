//! Experiment drivers behind the `sap` binary.

mod ablation;
mod attention_dump;
mod config;
mod gradcheck_suite;
mod model_file;

pub use ablation::{
    ladder_violations, prepare_data, records_to_csv, run_ablation, train_cell, write_report, AblationReport, AblationSummary,
    CellOutput, ReportPaths, ResultRecord, Split, VariantSummary, CSV_HEADER,
};
pub use attention_dump::{dump_attention, write_attention, AttentionReport, AttentionRow};
pub use config::{ConfigError, RunConfig, CONFIG_KEYS, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
pub use gradcheck_suite::{run_gradcheck_suite, ComponentResult, GradcheckOptions, GradcheckSuiteReport};
pub use model_file::{load_model, save_model, ModelFile};

use crate::data::{FormatError, GenError};
use crate::eval::EvalError;
use crate::sap::SapError;
use crate::training::TrainError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Generate(#[from] GenError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sap(#[from] SapError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for I/O and
    /// format problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(ConfigError::Io { .. }) => 3,
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } | HarnessError::Json { .. } | HarnessError::Format(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
