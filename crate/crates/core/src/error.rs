use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ball below resolution: {0}")]
    BelowResolution(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("ellipticity violated: {0}")]
    Ellipticity(String),
    #[error("inadmissible selection: {0}")]
    Inadmissible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
