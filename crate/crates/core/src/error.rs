use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the pure pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is out of range or inconsistent with the input geometry.
    Config(String),
    /// Array dimensions do not agree.
    Shape(String),
    /// An event or map failed a domain invariant.
    Validation(String),
    /// Event timestamps decrease at `index`.
    Ordering { index: usize, previous: u64, found: u64 },
    /// Timestamps cannot be normalized because the window has zero span.
    Normalization,
    /// A synthetic scene description is unusable.
    Spec(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Ordering {
                index,
                previous,
                found,
            } => write!(
                f,
                "ordering error: event {index} has t={found} after t={previous}"
            ),
            Error::Normalization => {
                write!(f, "normalization error: window span is zero but events are present")
            }
            Error::Spec(msg) => write!(f, "scene spec error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use shape_err;
