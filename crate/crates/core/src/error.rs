use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("patch size {patch} does not divide image of {height}x{width}")]
    NonDivisiblePatchSize {
        patch: usize,
        height: usize,
        width: usize,
    },
    #[error("inconsistent patch sequence: {0}")]
    InconsistentSequence(String),
    #[error("embedding width {0} is not divisible by 4")]
    BadDim(usize),
    #[error("masking ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid mask: {0}")]
    BadMask(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("layout constraints unsatisfiable for seed {0}")]
    ConstraintUnsatisfiable(u64),
    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] ::image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
