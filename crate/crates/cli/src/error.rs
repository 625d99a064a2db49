use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI run, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{stage} failed: {source}")]
    Runtime {
        stage: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("verification failed: {failed} of {total} checks did not pass (report: {report})")]
    Verification {
        failed: usize,
        total: usize,
        report: PathBuf,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Runtime { .. } | CliError::Verification { .. } => 1,
        }
    }

    pub(crate) fn runtime(stage: impl Into<String>, source: impl std::error::Error + Send + Sync + 'static) -> Self {
        CliError::Runtime {
            stage: stage.into(),
            source: Box::new(source),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a stage name to library errors.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Stage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::runtime(stage, e))
    }
}
