use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record is missing structure every consumer relies on (e.g. a neighbor slot).
    #[error("malformed record: {0}")]
    Structural(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("index {index} out of range (len {len})")]
    Range { index: usize, len: usize },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("event {0} never occurs in the corpus; load published priors instead")]
    ZeroCount(&'static str),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("buffer {id}: {msg}")]
    Corrupt { id: u64, msg: String },

    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("frame {frame}, {stage}")]
    Stage {
        frame: u64,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach the frame and pipeline stage at which this error surfaced.
    pub fn at(self, frame: u64, stage: &'static str) -> Self {
        Error::Stage {
            frame,
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
