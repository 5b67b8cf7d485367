use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A softmax row had no kept positions, i.e. an isolated node reached attention.
    #[error("empty neighborhood at row {row}")]
    EmptyNeighborhood { row: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("expected a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("in {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("gradient check probe failed at tensor {tensor}, coordinate {coord}: {source}")]
    GradCheckProbe {
        tensor: usize,
        coord: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("subject leakage: test subject {0} appeared in a training batch")]
    SubjectLeakage(String),

    #[error("unknown subject {0}")]
    UnknownSubject(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the model sub-stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
