use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown lane {0}")]
    UnknownLane(usize),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("ego-model fit diverged at batch {batch} (iteration {iteration})")]
    Diverged { batch: usize, iteration: usize },

    #[error("grid anchor mismatch between successive value grids")]
    AnchorMismatch,

    #[error("trajectory too short: {0} decision steps")]
    TrajectoryTooShort(usize),

    #[error("non-finite action value in frame {frame}")]
    NonFiniteLabel { frame: usize },

    #[error("dataset misaligned: {0}")]
    Misaligned(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding failed: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
