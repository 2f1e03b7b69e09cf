//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An API contract was violated (bad index, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration value (unknown activation, bad model shape, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Schema file failed to parse or validate.
    #[error("schema error: {0}")]
    Schema(String),

    /// CSV ingestion failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Dataset-level problem (empty result, label degeneracy, ...).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Stratified split could not satisfy its class guarantees.
    #[error("split error: {0}")]
    Split(String),

    /// A numeric parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Evaluation could not be performed.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Training produced a non-finite loss; carries epoch/batch/tensor diagnostics.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Checkpoint file is malformed or inconsistent with the given schema.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
