use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] dlms_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{failed} verification check(s) failed")]
    Verification { failed: usize },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage or configuration, 2 numerical, 3 verification.
    pub fn exit_code(&self) -> u8 {
        use dlms_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Json { .. } => 1,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Shape { .. } | E::Infeasible(_) | E::Format(_) | E::Io(_) => 1,
                E::Numerical(_)
                | E::RankDeficient { .. }
                | E::Range { .. }
                | E::Divergence { .. }
                | E::NonConvergence { .. } => 2,
            },
            CliError::Verification { .. } => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Core(dlms_core::Error::Domain("x".into())).exit_code(),
            1
        );
        assert_eq!(
            CliError::Core(dlms_core::Error::Divergence {
                step: 3,
                loss: 1e13
            })
            .exit_code(),
            2
        );
        assert_eq!(CliError::Verification { failed: 1 }.exit_code(), 3);
    }
}
