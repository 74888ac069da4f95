use std::fmt::Display;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Manifest, config or argument problem detected before any stage runs.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed on {}: {detail}", artifact.display())]
    Stage { stage: &'static str, artifact: PathBuf, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Stage { .. } => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn stage(stage: &'static str, artifact: impl AsRef<Path>, detail: impl Display) -> Self {
        CliError::Stage {
            stage,
            artifact: artifact.as_ref().to_path_buf(),
            detail: detail.to_string(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches a stage name and artifact path to any displayable error.
pub trait StageContext<T> {
    fn at(self, stage: &'static str, artifact: impl AsRef<Path>) -> Result<T>;
}

impl<T, E: Display> StageContext<T> for std::result::Result<T, E> {
    fn at(self, stage: &'static str, artifact: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| CliError::stage(stage, artifact, e))
    }
}
