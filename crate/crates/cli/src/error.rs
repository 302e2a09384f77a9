use std::path::PathBuf;

use thiserror::Error;

/// Failure classes; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("cannot read {}: {source}", path.display())]
    MissingInput {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: ntband::Error,
    },

    #[error(transparent)]
    Model(ntband::Error),

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ntband::Error> for CliError {
    fn from(e: ntband::Error) -> Self {
        match e {
            ntband::Error::UnknownScenario(_) => Self::Config(e.to_string()),
            e => Self::Model(e),
        }
    }
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::MissingInput { .. } => "missing-input",
            Self::Data { .. } => "data",
            Self::Model(_) => "model",
            Self::Output { .. } => "output",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 3,
            Self::MissingInput { .. } => 4,
            Self::Data { .. } => 5,
            Self::Model(_) => 6,
            Self::Output { .. } => 7,
        }
    }
}
