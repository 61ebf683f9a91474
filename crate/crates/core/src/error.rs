//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation was handed parameters that violate its
    /// contract (non-positive focal length, even window size, ...).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A scalar left the mathematical domain of an operation, e.g. a
    /// non-positive disparity fed into the depth conversion.
    #[error("domain error: {0}")]
    Domain(String),

    /// Pattern generation could not satisfy row uniqueness.
    #[error(
        "pattern generation failed after {attempts} attempt(s); colliding rows: {rows:?}"
    )]
    PatternGeneration { attempts: u32, rows: Vec<usize> },

    /// A rendered surface fell outside the rig's valid disparity range.
    #[error("frame {frame}: {primitive} leaves the valid depth range (disparity {disparity:.2} px outside [{d_min}, {d_max}])")]
    RenderOutOfRange {
        frame: usize,
        primitive: String,
        disparity: f64,
        d_min: f64,
        d_max: f64,
    },

    /// A metric was requested over an empty pixel set.
    #[error("metric undefined: {0}")]
    EmptyMask(String),

    /// Two sequences or maps that must agree in length/shape do not.
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    /// Malformed file contents (PGM/PFM headers, manifests, sidecars).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit class for the CLI: 2 for data problems, 3 for numeric
    /// failures. Usage errors (1) never originate here.
    pub fn exit_class(&self) -> i32 {
        match self {
            Error::InvalidParam(_)
            | Error::LengthMismatch(_)
            | Error::Format { .. }
            | Error::Io { .. } => 2,
            Error::Domain(_)
            | Error::PatternGeneration { .. }
            | Error::RenderOutOfRange { .. }
            | Error::EmptyMask(_) => 3,
        }
    }
}
