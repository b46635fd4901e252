//! Error types shared across the detection pipeline.

use std::fmt;

/// The calibration stage that produced a failure.
///
/// Stage names are stable identifiers; the CLI prints them verbatim so
/// callers can script against them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationStage {
    GridDetection,
    PsfExtraction,
    Projector,
    Threshold,
}

impl fmt::Display for CalibrationStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CalibrationStage::GridDetection => "grid-detection",
            CalibrationStage::PsfExtraction => "psf-extraction",
            CalibrationStage::Projector => "projector",
            CalibrationStage::Threshold => "threshold",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A constructor or argument failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Inputs that must share dimensions do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A site or pixel position falls outside the image it is used with.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A calibration stage could not produce a usable result.
    #[error("calibration failed at {stage}: {message}")]
    Calibration {
        stage: CalibrationStage,
        message: String,
    },

    /// A calibration profile is unusable at runtime.
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

impl Error {
    pub(crate) fn calibration(stage: CalibrationStage, message: impl Into<String>) -> Self {
        Error::Calibration {
            stage,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
