use std::path::PathBuf;

use thiserror::Error;

use crate::filter::{ParseFailure, ScoreRecord, ScorerError};
use crate::pose::ExtractError;

/// Coarse error classes; the CLI maps them onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    ExternalService,
    Shortfall,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("unknown category id {0} (valid ids are 0..=9)")]
    UnknownCategory(i64),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(f32),

    #[error("diffusion step {t} out of range for a {steps}-step schedule")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("class {category} short by {shortfall}: needed {needed}, available {available}")]
    Shortfall {
        category: String,
        needed: usize,
        available: usize,
        shortfall: usize,
    },

    #[error("class {0} is absent from the training manifest")]
    MissingClass(String),

    #[error("{path}:{line}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unsupported format_version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Extract(#[from] ExtractError),

    #[error(transparent)]
    Scorer(#[from] ScorerError),

    #[error("unparseable score for sample {}: {failure}", record.sample_id)]
    UnparseableScore {
        record: Box<ScoreRecord>,
        failure: ParseFailure,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shortfall { .. } | Error::MissingClass(_) => ErrorKind::Shortfall,
            Error::Extract(_) | Error::Scorer(_) | Error::UnparseableScore { .. } => {
                ErrorKind::ExternalService
            }
            Error::Io { .. } | Error::Image(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
