use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants split into two families: [`Error::is_validation`] is true for
/// bad input or configuration, false for I/O and data-dependent failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },

    /// A row-level problem in one of a subject's CSV files.
    #[error("subject {subject}: {path}:{line}: {message}")]
    Record {
        subject: String,
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("subject {subject}: {message}")]
    Subject { subject: String, message: String },

    #[error("unstable filter design: {0}")]
    UnstableFilter(String),

    #[error("input too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("insufficient beats: {0}")]
    InsufficientBeats(String),

    #[error("window of {span_s} s is below the 60 s floor required for spectral HRV features")]
    SpectralSpan { span_s: f64 },

    /// A window whose features cannot be computed without fabricating a value.
    #[error("unusable window: {0}")]
    Unusable(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("SGD diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("missing feature {0:?}")]
    MissingFeature(String),

    #[error("model catalog version {found:?} does not match {expected:?}")]
    CatalogVersion { expected: String, found: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn subject(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Subject {
            subject: subject.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by invalid input or configuration rather than
    /// by I/O or by the data itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::SpectralSpan { .. }
                | Error::CatalogVersion { .. }
                | Error::MissingFeature(_)
        )
    }
}
