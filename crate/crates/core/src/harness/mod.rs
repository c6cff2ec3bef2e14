//! File formats and the seeded experiment driver behind the `sparsecp` CLI.
//!
//! Input logits are CSV with header `label,z0,...,z{K-1}`. Experiments are
//! configured by JSON, produce a JSON report, and a long-format CSV for
//! plotting.

mod experiment;
mod io;
pub mod synthetic;

use thiserror::Error;

use crate::error::Error;

pub use experiment::{
    run_experiment, run_experiment_on, run_split, Aggregate, CellReport, ExperimentConfig,
    ExperimentReport, MethodSpec,
};
pub use io::{
    emit_plot_data, load_dataset, parse_dataset, parse_logits, plot_data_rows, write_dataset,
    PlotRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        line: u64,
        label: usize,
        classes: usize,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    InconsistentWidth {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<Error> for HarnessError {
    fn from(source: Error) -> Self {
        HarnessError::Core {
            context: "error".into(),
            source,
        }
    }
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn core(context: impl Into<String>, source: Error) -> Self {
        HarnessError::Core {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for malformed input or configuration, 3 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } => 3,
            HarnessError::Core {
                source: Error::NonConvergence { .. } | Error::InsufficientData(_) | Error::EmptyRun,
                ..
            } => 3,
            _ => 2,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;
