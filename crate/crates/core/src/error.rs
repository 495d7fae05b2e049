use thiserror::Error;

/// Errors raised by the estimation and variance-analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The sampling density vanishes where the reference density does not.
    #[error("support violation at {point:?}: reference pdf {p} but sampling pdf {q}")]
    SupportViolation { point: Vec<f64>, p: f64, q: f64 },

    #[error("{count} non-finite value(s) encountered in {context}")]
    NonFinite { count: usize, context: String },

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("rejection envelope violated twice (pdf {pdf} above envelope {envelope})")]
    Envelope { pdf: f64, envelope: f64 },

    #[error("input outside bounds in row(s) {rows:?}")]
    OutOfBounds { rows: Vec<usize> },

    #[error("dataset: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical kind (support, non-finite, quadrature, envelope).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SupportViolation { .. }
                | Error::NonFinite { .. }
                | Error::Quadrature(_)
                | Error::Envelope { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
