use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} needs derivative order {required} but only {available} is available")]
    Capability { what: String, required: usize, available: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("non-finite value at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("splitting certificate: {0}")]
    Certificate(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
    #[error("non-finite functional value on path {path} (stream {stream})")]
    Estimator { path: usize, stream: u64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what: what.to_string(), expected, got })
    }
}
