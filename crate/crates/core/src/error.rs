//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by volume geometry, fitting, evaluation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dims/spacing between volumes that must share a grid.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Too few observations for the requested fit.
    #[error("arity error: {0}")]
    Arity(String),

    /// Invalid argument value (duplicate b-values, empty mask, bad range...).
    #[error("input error: {0}")]
    Input(String),

    /// Tensor shape incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed HVOL or sidecar payload.
    #[error("format error: {0}")]
    Format(String),

    /// Phantom specification violates its own constraints.
    #[error("spec error: {0}")]
    Spec(String),

    /// Statistic undefined on the given data (single-class labels...).
    #[error("degenerate data error: {0}")]
    DegenerateData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error channel.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Geometry(_) => "geometry",
            Error::Arity(_) => "arity",
            Error::Input(_) => "input",
            Error::Shape(_) => "shape",
            Error::Format(_) => "format",
            Error::Spec(_) => "spec",
            Error::DegenerateData(_) => "degenerate_data",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
