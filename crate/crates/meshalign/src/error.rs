//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature maps must be l2-normalized before correlation")]
    NotNormalized,
    #[error("patch side K must be odd, got {0}")]
    EvenPatchSize(usize),
    #[error("scale factor alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("expected a raw correlation volume, got probabilities")]
    ExpectedRawVolume,
    #[error("expected a probability volume, got raw correlations")]
    ExpectedProbabilityVolume,
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("homography is not invertible")]
    NotInvertible,
    #[error("point maps to the line at infinity")]
    PointAtInfinity,
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("images do not overlap (mask support {support:.4} of canvas)")]
    NoOverlap { support: f64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
}
