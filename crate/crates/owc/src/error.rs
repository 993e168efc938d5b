use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("state error: {0}")]
    State(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate codebook: {0}")]
    DegenerateCodebook(String),
    #[error("annealing incomplete: {0}")]
    AnnealingIncomplete(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("version error: {0}")]
    Version(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
