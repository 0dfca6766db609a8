use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: String, message: String },
    #[error("{stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Stage { .. } => 4,
        }
    }

    pub fn data(stage: &str, message: impl std::fmt::Display) -> Self {
        CliError::Data { stage: stage.into(), message: message.to_string() }
    }

    pub fn stage(stage: &str, message: impl std::fmt::Display) -> Self {
        CliError::Stage { stage: stage.into(), message: message.to_string() }
    }
}
