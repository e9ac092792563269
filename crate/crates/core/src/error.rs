use std::path::PathBuf;

use molforge_chem::ChemError;
use molforge_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown character {ch:?} at offset {offset}")]
    UnknownCharacter { ch: char, offset: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(usize),
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("sequence of {len} positions exceeds max_len {max}")]
    LengthOverflow { len: usize, max: usize },
    #[error("condition id {id} out of range (model has {count})")]
    UnknownCondition { id: usize, count: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: missing column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}: {reason}")]
    UnparseableRow { path: PathBuf, row: usize, reason: String },
    #[error("row {row}: unknown target name {name:?}")]
    UnknownTargetName { row: usize, name: String },
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("checkpoint payload is {actual} bytes, header describes {expected}")]
    PayloadLengthMismatch { expected: usize, actual: usize },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error("empty reference set")]
    EmptyReference,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Model,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            UnknownCharacter { .. } | EmptyCorpus | UnknownToken(_) | MissingColumn { .. }
            | UnparseableRow { .. } | UnknownTargetName { .. } | EmptyInput | EmptyReference
            | Chem(_) | Csv(_) | Io(_) => ErrorClass::Data,
            UnknownId(_) | LengthOverflow { .. } | UnknownCondition { .. } | ConfigMismatch(_)
            | InvalidConfig(_) | CorruptHeader(_) | PayloadLengthMismatch { .. }
            | VersionMismatch { .. } | Json(_) => ErrorClass::Model,
            Tensor(_) => ErrorClass::Internal,
        }
    }

    /// Stable variant name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            UnknownCharacter { .. } => "UnknownCharacter",
            EmptyCorpus => "EmptyCorpus",
            UnknownId(_) => "UnknownId",
            UnknownToken(_) => "UnknownToken",
            LengthOverflow { .. } => "LengthOverflow",
            UnknownCondition { .. } => "UnknownCondition",
            ConfigMismatch(_) => "ConfigMismatch",
            InvalidConfig(_) => "InvalidConfig",
            MissingColumn { .. } => "MissingColumn",
            UnparseableRow { .. } => "UnparseableRow",
            UnknownTargetName { .. } => "UnknownTargetName",
            CorruptHeader(_) => "CorruptHeader",
            PayloadLengthMismatch { .. } => "PayloadLengthMismatch",
            VersionMismatch { .. } => "VersionMismatch",
            EmptyInput => "EmptyInput",
            EmptyReference => "EmptyReference",
            Tensor(_) => "Tensor",
            Chem(_) => "Chem",
            Io(_) => "Io",
            Json(_) => "Json",
            Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
