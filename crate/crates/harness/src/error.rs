use std::io;
use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{context}: parse error at byte {offset}: {message}")]
    Parse {
        context: String,
        offset: u64,
        message: String,
    },
    #[error("{context}: {message}")]
    Format { context: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] bast_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("no evaluation image is classified correctly by every white-box model; train the models longer")]
    NoSurvivors,
    #[error("protocol violation: black-box model `{model}` received {queries} gradient queries")]
    BlackBoxQueried { model: String, queries: usize },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        HarnessError::Parse {
            context: context.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}
