//! Library half of the `topicrnn` binary: checkpoints, run reports and the
//! subcommands, kept here so integration tests can reach them.

pub mod checkpoint;
pub mod commands;
pub mod report;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Usage(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(topicrnn::Error),
}

impl From<topicrnn::Error> for CliError {
    fn from(e: topicrnn::Error) -> Self {
        match e {
            topicrnn::Error::Io { path, source } => CliError::Io { path, source },
            e @ (topicrnn::Error::NonFiniteLoss { .. } | topicrnn::Error::Numeric(_)) => {
                CliError::NonFinite(e.to_string())
            }
            e => CliError::Core(e),
        }
    }
}

impl CliError {
    /// 2 for file problems, 3 for numerical blow-ups, 4 for vocabulary
    /// mismatches, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 2,
            CliError::NonFinite(_) => 3,
            CliError::VocabMismatch(_) => 4,
            _ => 1,
        }
    }
}
