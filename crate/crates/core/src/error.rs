//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite data: {0}")]
    NonFiniteData(String),

    /// Object support too large relative to the frame for the modulus
    /// constraint to determine phases (linear oversampling < 2).
    #[error(
        "insufficient oversampling: support {support_w}x{support_h} exceeds half of frame {frame_w}x{frame_h}"
    )]
    InsufficientOversampling {
        support_w: usize,
        support_h: usize,
        frame_w: usize,
        frame_h: usize,
    },

    #[error("all pixels are flagged invalid")]
    AllPixelsInvalid,

    #[error("non-finite value produced at iteration {iteration}")]
    NonFiniteIteration { iteration: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("epipole ({x}, {y}) lies inside the image; rectification undefined")]
    EpipoleInsideImage { x: f64, y: f64 },

    #[error("no suitable edge found for resolution estimation")]
    NoEdgeDetected,

    #[error("{detected} structures detected, {requested} requested")]
    TooFewStructures { detected: usize, requested: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (config or arguments) rather
    /// than a failure while processing valid input. The CLI maps these to a
    /// distinct exit code.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Parse { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
