use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] speckle_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Short category used in the one-line error printed by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Core(speckle_core::Error::Io(_)) | Self::Io(_) => "io",
            Self::Core(speckle_core::Error::Numerical { .. }) => "numerical",
            Self::Core(speckle_core::Error::Image(_)) => "image",
            Self::Core(_) => "input",
            Self::Csv(_) | Self::Json(_) => "output",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}
