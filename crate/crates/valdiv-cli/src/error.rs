use std::path::PathBuf;

use valdiv::enumerate::EnumerateError;
use valdiv::model_client::ClientError;
use valdiv::theory::TheoryError;
use valdiv::valid_set::ValidSetError;

/// Process exit codes, one per failure class.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;
pub const EXIT_REMOTE: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verification: {check}: {violations} violation(s), max slack {max_slack}")]
    Verification {
        check: String,
        violations: usize,
        max_slack: f64,
    },
    #[error("remote: {0}")]
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io { .. } => EXIT_IO,
            Self::Verification { .. } => EXIT_VERIFICATION,
            Self::Remote(_) => EXIT_REMOTE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}

impl From<EnumerateError> for CliError {
    fn from(e: EnumerateError) -> Self {
        match e {
            EnumerateError::Model {
                remote: true,
                detail,
            } => Self::Remote(detail),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<TheoryError> for CliError {
    fn from(e: TheoryError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<ValidSetError> for CliError {
    fn from(e: ValidSetError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<valdiv::ranked_dist::DistributionError> for CliError {
    fn from(e: valdiv::ranked_dist::DistributionError) -> Self {
        Self::Config(e.to_string())
    }
}

/// Client errors carry their own remote/local split.
pub fn from_client(e: ClientError) -> CliError {
    match e {
        ClientError::Io { path, source } => CliError::Io { path, source },
        other if other.is_remote() => CliError::Remote(other.to_string()),
        other => CliError::Config(other.to_string()),
    }
}
