use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{module}: insufficient data: {reason}")]
    InsufficientData { module: &'static str, reason: String },

    #[error("{module}: fit failed: {reason}")]
    Fit { module: &'static str, reason: String },

    #[error("kde: singular bandwidth: {0}")]
    SingularBandwidth(String),

    #[error("shape mismatch: expected {expected} dimensions, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("kde: all conditioning weights underflow")]
    UnsupportedConditioning,

    #[error("geometry: bearing undefined for coincident points")]
    UndefinedBearing,

    #[error("geometry: destination lies at a pole")]
    PoleDegeneracy,

    #[error("pacf: series has zero variance")]
    UndefinedCorrelation,

    #[error("preprocess: {0}")]
    Domain(String),

    #[error("preprocess: Box-Cox inverse undefined for this residual")]
    InvalidInverse,

    #[error("gam: separation detected (|coefficient| = {0:.1})")]
    Separation(f64),

    #[error("risk: no catalog point lies in region {0}")]
    UndefinedRegion(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("bundle schema mismatch: expected version {expected}, found {found}")]
    Schema { expected: u32, found: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn fit(module: &'static str, reason: impl Into<String>) -> Self {
        Error::Fit {
            module,
            reason: reason.into(),
        }
    }

    pub(crate) fn insufficient(module: &'static str, reason: impl Into<String>) -> Self {
        Error::InsufficientData {
            module,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Argument(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Shape { .. }
        )
    }
}
