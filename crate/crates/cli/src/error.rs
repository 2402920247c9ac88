use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] robust_rlhf::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Field { field: field.to_owned(), message: message.into() }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
