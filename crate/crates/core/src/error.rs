use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure classes shared by every module.
///
/// The lab crate maps these onto process exit codes, so the split between
/// configuration, data and numerical failures is part of the contract.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes, hyperparameters or architecture choices that cannot work.
    Config(String),
    /// Input data outside its domain (targets outside [0,1], empty sprites, ...).
    Data(String),
    /// API misuse: out-of-range indices, non-scalar loss, mismatched lengths.
    Usage(String),
    /// A forward value became NaN or infinite.
    Numerical { iteration: Option<u64>, term: String },
    /// A metric has no defined value for the given representation.
    MetricUndefined(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numerical(term: impl Into<String>) -> Self {
        Error::Numerical { iteration: None, term: term.into() }
    }

    /// Attach the training iteration to a numerical failure.
    pub fn at_iteration(self, it: u64) -> Self {
        match self {
            Error::Numerical { term, .. } => Error::Numerical { iteration: Some(it), term },
            other => other,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Numerical { iteration: Some(it), term } => {
                write!(f, "non-finite value in `{term}` at iteration {it}")
            }
            Error::Numerical { iteration: None, term } => write!(f, "non-finite value in `{term}`"),
            Error::MetricUndefined(m) => write!(f, "metric undefined: {m}"),
        }
    }
}

impl core::error::Error for Error {}
