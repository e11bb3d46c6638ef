use alloc::string::String;

use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("raster dimensions differ: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },
    #[error("class count differs: {0} vs {1}")]
    ClassCountMismatch(u16, u16),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("component is empty")]
    EmptyComponent,
    #[error("feature schema mismatch: expected {expected} values, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("non-finite feature value in row {row}, column {column}")]
    NonFiniteFeature { row: usize, column: usize },
    #[error("meta dataset is empty")]
    EmptyDataset,
    #[error("meta dataset contains a single target class")]
    SingleClass,
    #[error("inconsistent tau across match results: {0} vs {1}")]
    InconsistentTau(f64, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown class name `{0}`")]
    UnknownClass(String),
    #[error("depth raster required for smoothing")]
    MissingDepth,
    #[error("image `{0}` is not part of the evaluated set")]
    UnknownImage(String),
    #[error("no candidates to evaluate")]
    NoCandidates,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_width: a.0,
            left_height: a.1,
            right_width: b.0,
            right_height: b.1,
        }
    }
}
