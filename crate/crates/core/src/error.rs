//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no data: {0}")]
    NoData(String),

    #[error("bad record at {timestamp}: {reason}")]
    BadRecord {
        timestamp: NaiveDateTime,
        reason: String,
    },

    #[error("no risk-free rate for {0}")]
    MissingRate(NaiveDate),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("moment undefined: realized variance is zero")]
    UndefinedMoment,

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("collinear regressors: {}", .columns.join(", "))]
    Collinearity { columns: Vec<String> },

    #[error("sort error: {0}")]
    Sort(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` needs {missing}; run `{run_first}` first")]
    Dependency {
        stage: String,
        missing: PathBuf,
        run_first: String,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Process exit classes used by the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Data = 3,
    Numerical = 4,
}

impl Error {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Config(_) | Error::Dependency { .. } => ExitClass::Config,
            Error::NoData(_)
            | Error::BadRecord { .. }
            | Error::MissingRate(_)
            | Error::InsufficientData { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_) => ExitClass::Data,
            Error::UndefinedMoment
            | Error::Rank(_)
            | Error::Collinearity { .. }
            | Error::Sort(_) => ExitClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
