use std::path::PathBuf;

use groundmesh::registration::PipelineError;
use thiserror::Error;

/// Failures of the harness and CLI, grouped by process exit code.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] groundmesh::Error),

    #[error(transparent)]
    Pipeline(#[from] PipelineError),

    #[error("registration did not converge")]
    NotConverged,
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 2 for invalid input, 3 for non-convergence, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io { .. } => 4,
            BenchError::NotConverged => 3,
            BenchError::Parse { .. }
            | BenchError::Invalid(_)
            | BenchError::Core(_)
            | BenchError::Pipeline(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
