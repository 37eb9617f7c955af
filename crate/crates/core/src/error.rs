use std::path::PathBuf;

use thiserror::Error;

/// Tensor shapes that do not fit an operation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter {param} ({name}) at element {element}")]
    NonFiniteGradient {
        param: usize,
        name: String,
        element: usize,
    },

    #[error("non-finite {term} term in loss")]
    NonFiniteLoss { term: &'static str },

    #[error("training diverged at step {step}: {source}")]
    Diverged {
        step: usize,
        last_checkpoint: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown geometry `{name}`; supported: {}", supported.join(", "))]
    UnknownGeometry {
        name: String,
        supported: Vec<String>,
    },

    #[error("grid of {size} entries exceeds the configured maximum of {max}")]
    GridTooLarge { size: usize, max: usize },

    #[error("invalid dimension partition: {0}")]
    Partition(String),

    #[error("collapsed space: no latent dimension is informative")]
    CollapsedSpace,

    #[error("weights file rejected: {0}")]
    Weights(String),

    #[error("image decode failed: {0}")]
    ImageDecode(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
