use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed RLE: {0}")]
    MalformedRle(String),

    #[error("point ({x}, {y}) lies outside the {width}x{height} canvas")]
    PointOutOfCanvas {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("canvas too small: {0}")]
    CanvasTooSmall(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("prompt sampler failed in iteration {iteration}: {source}")]
    Sampler {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
