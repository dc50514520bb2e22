use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing stage `{stage}`: {path} not found; run `sfd mnist {stage}` first")]
    MissingStage { stage: &'static str, path: PathBuf },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] sfd_core::Error),
}

impl CliError {
    /// Short machine-readable category for the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::MissingStage { .. } => "missing_stage",
            CliError::Csv(_) | CliError::Json(_) | CliError::Io(_) => "io",
            CliError::Core(_) => "core",
        }
    }
}
