use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate projection: homogeneous depth {depth:e} is on the camera plane")]
    DegenerateProjection { depth: f64 },

    #[error("invalid arrangement spec: {0}")]
    InvalidSpec(String),

    #[error("parse error{}{}: {msg}", .line.map(|l| format!(" at line {l}")).unwrap_or_default(), .field.as_ref().map(|f| format!(" in field `{f}`")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        field: Option<String>,
        msg: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("insufficient views: {effective} effective, at least 2 required")]
    InsufficientViews { effective: usize },

    #[error("ill-conditioned normal matrix (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeReuse,

    #[error("query count {0} is not a perfect square")]
    NonSquareK(usize),

    #[error("insufficient anchors: {anchors} anchors for {persons} persons with W={w}")]
    InsufficientAnchors {
        anchors: usize,
        persons: usize,
        w: usize,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn field(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line: None,
            field: Some(field.into()),
            msg: msg.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: Some(e.line()),
            field: None,
            msg: e.to_string(),
        }
    }
}
