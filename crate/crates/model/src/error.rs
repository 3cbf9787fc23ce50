use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("{what}: {axis} axis has size {found}, expected {expected}")]
    Shape { what: &'static str, axis: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("relative offset table covers |r| < {max}, sequence needs {needed}")]
    OffsetCoverage { max: usize, needed: usize },
    #[error("temperature must be >= 0, got {0}")]
    NegativeTemperature(f64),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss in {component}")]
    NonFinite { component: &'static str },
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn check_dim(what: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ModelError::Shape { what, axis, expected, found });
    }
    Ok(())
}
