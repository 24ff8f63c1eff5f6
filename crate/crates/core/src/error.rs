use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a {expected}-channel image, got {actual} channels")]
    ChannelMismatch { expected: u8, actual: u8 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),

    #[error("histogram is degenerate (constant image)")]
    DegenerateHistogram,

    #[error("malformed RLE: {0}")]
    MalformedRle(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("missing image {path}: {reason}")]
    MissingImage { path: PathBuf, reason: String },

    #[error("object bank is empty")]
    EmptyBank,

    #[error("background pool is empty")]
    EmptyPool,

    #[error("no class has at least {needed} bank entries")]
    NoEligibleClass { needed: usize },

    #[error("placement exhausted after {attempts} attempts")]
    PlacementExhausted { attempts: u32 },

    #[error("scene has no depth channel")]
    MissingDepth,

    #[error("dimensions not divisible by factor {factor}: {width}x{height}")]
    NotDivisible { width: usize, height: usize, factor: usize },

    #[error("integrity error: {}", .0.join("; "))]
    Integrity(Vec<String>),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("category tables differ: {0}")]
    CategoryMismatch(String),

    #[error("image sets differ: {0}")]
    ImageSetMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error on {path}: {source}")]
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
