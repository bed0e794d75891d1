use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] dspa::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(dspa::Error::NonFiniteState { .. }) => EXIT_DIVERGENCE,
            CliError::Core(
                dspa::Error::TransportFailure(_)
                | dspa::Error::PeerClosed(_)
                | dspa::Error::ProtocolViolation(_),
            ) => EXIT_TRANSPORT,
            _ => EXIT_CONFIG,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let diverged = dspa::Error::NonFiniteState {
            iteration: 3,
            variable: "x".into(),
            index: 0,
            value: f64::NAN,
        };
        assert_eq!(CliError::from(diverged).exit_code(), 4);
        assert_eq!(
            CliError::from(dspa::Error::TransportFailure("x".into())).exit_code(),
            3
        );
        assert_eq!(CliError::from(dspa::Error::EmptyBuffer).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    }
}
