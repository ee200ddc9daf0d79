use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_VERIFICATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] grassmann_stream::Error),
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
    #[error("{0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use grassmann_stream::Error as E;
        match self {
            Self::ConfigRead { .. } | Self::ConfigParse { .. } | Self::Usage(_) => EXIT_CONFIG,
            Self::Core(E::InvalidParameter { .. } | E::DimensionMismatch { .. }) => EXIT_CONFIG,
            Self::Core(_) | Self::Output { .. } | Self::Runtime(_) => EXIT_RUNTIME,
            Self::Verification(_) => EXIT_VERIFICATION,
        }
    }

    pub fn output(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Self::Output {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;
    use grassmann_stream::Error as E;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(E::InvalidParameter { name: "d", reason: "bad".into() }).exit_code(), EXIT_CONFIG);
        let failed = E::GenerationFailed {
            attempts: 100,
            reason: "rank".into(),
        };
        assert_eq!(CliError::Core(failed).exit_code(), EXIT_RUNTIME);
        assert_eq!(CliError::Core(E::NonFinite).exit_code(), EXIT_RUNTIME);
        assert_eq!(CliError::output("x", "denied").exit_code(), EXIT_RUNTIME);
        assert_eq!(CliError::Verification("schur".into()).exit_code(), EXIT_VERIFICATION);
    }
}
