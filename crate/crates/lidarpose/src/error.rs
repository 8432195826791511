//! Error types shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("frame mismatch: expected {expected}, got {got}")]
    FrameMismatch { expected: String, got: String },

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("degenerate scan: {0}")]
    DegenerateScan(String),

    #[error("degenerate configuration: {0}")]
    Degeneracy(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("timestamp out of range: {0}")]
    OutOfRange(String),

    #[error("empty reconstruction: no valid samples")]
    EmptyReconstruction,

    #[error("normals required but missing")]
    MissingNormals,

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("registration failure: {0}")]
    RegistrationFailure(String),

    #[error("no template variant matched")]
    NoMatch,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
