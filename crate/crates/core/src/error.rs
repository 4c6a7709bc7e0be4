use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("non-uniform time grid in {path} at row {row}: dt = {dt}")]
    Grid { path: PathBuf, row: usize, dt: f64 },

    #[error("{path} has {rows} rows; at least 5 are required by the velocity stencil")]
    TooShort { path: PathBuf, rows: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged in epoch {epoch}: {reason}")]
    TrainingDivergence { epoch: usize, reason: String },

    #[error("parameter constraint violated: {0}")]
    Constraint(String),

    #[error("identification failed: {0}")]
    IdentificationFailed(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
