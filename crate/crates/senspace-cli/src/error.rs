use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("stage {stage} failed: {message}")]
    StageFailure { stage: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::StageFailure { .. } => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        CliError::StageFailure { stage: stage.to_string(), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<senspace::error::Error> for CliError {
    fn from(e: senspace::error::Error) -> Self {
        CliError::StageFailure { stage: String::new(), message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
