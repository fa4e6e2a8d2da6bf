//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has zero width or height")]
    EmptyImage,

    #[error("buffer length {got} does not match {width}x{height} grid with {channels} channel(s)")]
    BadBufferLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("class count mismatch: {0} vs {1}")]
    ClassCountMismatch(usize, usize),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },

    #[error("grid contains UNKNOWN labels where a complete labeling is required")]
    UnexpectedUnknown,

    #[error("parameters contain non-finite values")]
    NonFiniteParams,

    #[error("gate weight {0} outside [0, 1)")]
    GateOutOfRange(f64),

    #[error("{stage} training diverged at step {step} (loss {loss})")]
    Divergence {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("region training set is empty")]
    EmptyRegionDataset,

    #[error("supervision contains no labeled pixels")]
    NoTrainablePixels,

    #[error("learning-rate query k={k} beyond schedule horizon K={max}")]
    ScheduleOutOfRange { k: usize, max: usize },

    #[error("invalid value {value} for {name}")]
    InvalidParam { name: &'static str, value: f64 },

    #[error("could not place a shape after {0} attempts")]
    PlacementFailed(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {format} data: {reason}")]
    MalformedPnm { format: &'static str, reason: String },

    #[error("malformed parameter file: {0}")]
    MalformedParams(String),
}

impl Error {
    /// Attach a stage name to a divergence error raised inside a training loop.
    pub fn with_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Divergence { step, loss, .. } => Error::Divergence { stage, step, loss },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
