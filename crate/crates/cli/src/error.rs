use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("integrity error in stage {stage}: {message}")]
    Integrity { stage: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Integrity { .. } => 4,
        }
    }

    pub fn stage(stage: &str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
