use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is singular or ill-conditioned (1-norm condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset is empty after ingestion")]
    EmptyDataset,

    #[error("feature `{0}` is constant on the training split")]
    ConstantFeature(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing {what} at {path}; rerun `{stage}` first")]
    MissingArtifact {
        what: String,
        path: PathBuf,
        stage: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric/convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::ConstantFeature(_)
            | Error::DegenerateData(_)
            | Error::EmptyInput(_)
            | Error::MissingArtifact { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 2,
            Error::Singular { .. }
            | Error::Domain(_)
            | Error::State(_)
            | Error::Divergence(_)
            | Error::Numeric(_) => 3,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
