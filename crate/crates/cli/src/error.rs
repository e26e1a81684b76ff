use std::path::{Path, PathBuf};

use dynqr::backtest::BacktestError;
use dynqr::dgp::DgpError;
use dynqr::fitter::FitError;
use dynqr::ModelError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error("replication {replication}: {message}")]
    Replication { replication: usize, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Csv { .. } => "csv",
            CliError::Dgp(_) => "simulation",
            CliError::Model(_) => "model",
            CliError::Fit(_) => "fit",
            CliError::Backtest(_) => "backtest",
            CliError::Replication { .. } => "replication",
            CliError::Usage(_) => "usage",
        }
    }

    /// One-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("error JSON")
    }
}
