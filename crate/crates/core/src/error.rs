use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sample too small: got {got} rows, need at least {min}")]
    SampleTooSmall { got: usize, min: usize },

    #[error("degenerate sample: zero variance on axis {axis}")]
    DegenerateSample { axis: usize },

    #[error("point {point:?} lies outside the cube")]
    OutsideCube { point: Vec<f64> },

    #[error("non-finite value in {context} at {location:?}")]
    NonFinite {
        context: &'static str,
        location: Vec<f64>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("truncation infeasible: acceptance rate {rate:.4} below 1%")]
    InfeasibleTruncation { rate: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes; the CLI and the C ABI map them to exit/status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::InfeasibleTruncation { .. } => ErrorClass::Config,
            Error::SampleTooSmall { .. }
            | Error::OutsideCube { .. }
            | Error::DegenerateSample { .. }
            | Error::Data(_)
            | Error::Io(_) => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
