use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// An argument is outside its valid domain (e.g. a non-positive sigma).
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A computation produced or met a non-finite or out-of-domain value.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A requested size exceeds a configured budget or cannot be allocated.
    #[error("resource limit: {0}")]
    Resource(String),
}

/// Shorthand for results carrying [`Error`].
pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
