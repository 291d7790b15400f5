use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument lies outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two rasters, stacks or tensors that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Point geometry too degenerate for a rigid fit.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// ICP stopped at the iteration cap without meeting the tolerance.
    #[error("ICP did not converge after {iterations} iterations (rms {rms:.3e} m)")]
    NotConverged { iterations: usize, rms: f64 },

    /// ICP failed while aggregating the given frame.
    #[error("aggregation failed at frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("frame label mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: String, found: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
