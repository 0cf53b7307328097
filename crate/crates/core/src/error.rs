use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate record id '{0}'")]
    DuplicateRecordId(String),

    #[error("record '{record_id}' is invalid: {reason}")]
    InvalidRecord { record_id: String, reason: String },

    #[error("cluster '{0}' is empty")]
    EmptyCluster(String),

    #[error("record '{record_id}' has image_vec of length {found}, corpus dimension is {expected}")]
    ImageDimMismatch {
        record_id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough clusters: requested {requested}, corpus has {available}")]
    InsufficientClusters { requested: usize, available: usize },

    #[error("{split} references unknown record '{record_id}'")]
    DanglingReference { split: String, record_id: String },

    #[error("training set must contain both matched and mismatched pairs")]
    SingleLabel,

    #[error("{kind} matcher needs image vectors but record '{record_id}' has none")]
    MissingModality { kind: String, record_id: String },

    #[error("decisions do not cover the gold pairs: {missing} missing, {extra} extra")]
    CoverageMismatch { missing: usize, extra: usize },

    #[error("provenance mismatch: expected corpus {expected}, found {found}")]
    ProvenanceMismatch { expected: String, found: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
