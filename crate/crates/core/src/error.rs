use thiserror::Error;

/// Errors produced by the geometry, registration and decoding routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("no overlap for scale alignment")]
    NoOverlap,

    #[error("degenerate prediction")]
    DegeneratePrediction,

    #[error("degenerate source")]
    DegenerateSource,

    #[error("degenerate sample")]
    DegenerateSample,

    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("mesh has zero total surface area")]
    ZeroArea,
}

pub type Result<T> = std::result::Result<T, Error>;
