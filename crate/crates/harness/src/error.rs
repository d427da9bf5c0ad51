use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at {path} (line {line}): {msg}")]
    Config { path: String, line: usize, msg: String },
    #[error("resource cap: {0}")]
    Resource(String),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error(transparent)]
    Core(#[from] dtmc::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 for validation failures, 3 for resource caps, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use dtmc::Error as E;
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Resource(_) => 3,
            HarnessError::Core(E::ResourceCap(_)) => 3,
            HarnessError::Core(E::Invalid(_) | E::Grid(_) | E::Dimension { .. } | E::Parse { .. } | E::Certificate(_) | E::Capability { .. }) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
