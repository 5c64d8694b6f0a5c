use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the oadg toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed json in {path}: {message}")]
    MalformedJson { path: PathBuf, message: String },

    #[error("bounding box out of bounds in sample {0}")]
    BoxOutOfBounds(String),

    #[error("unknown class id {class_id} (dataset has {num_classes} classes)")]
    UnknownClassId { class_id: usize, num_classes: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("image decode failed for {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("degenerate image: {0}")]
    DegenerateImage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation {0} is not legal in this category")]
    WrongOpCategory(String),

    #[error("unknown corruption kind: {0}")]
    UnknownKind(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("feature {0} has (near) zero norm")]
    ZeroNormFeature(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("probability vector is not on the simplex: {0}")]
    NotOnSimplex(String),

    #[error("pairing mismatch: {0}")]
    PairingMismatch(String),

    #[error("incomplete performance matrix: {0}")]
    IncompleteMatrix(String),

    #[error("class {0} has no feature vectors")]
    EmptyClass(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
