use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),

    #[error("source signal has zero energy")]
    ZeroEnergy,

    #[error("signal too short: {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("auto-spectrum below floor in {} band bin(s): {bins:?}", bins.len())]
    DegenerateBins { bins: Vec<usize> },

    #[error("feature vectors are defined on different frequency bands")]
    BandMismatch,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("node {0} has zero degree")]
    ZeroDegree(usize),

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("diffusion component {component} has vanishing eigenvalue {value:e}")]
    VanishingEigenvalue { component: usize, value: f64 },

    #[error("query has no affinity to any training sample")]
    NoAffinity,

    #[error("no distinct correlation peak (peak-to-median ratio {ratio:.3})")]
    NoPeak { ratio: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("at azimuth {azimuth:.3} deg: {source}")]
    AtAzimuth {
        azimuth: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_azimuth(self, azimuth: f64) -> Error {
        Error::AtAzimuth {
            azimuth,
            source: Box::new(self),
        }
    }
}
