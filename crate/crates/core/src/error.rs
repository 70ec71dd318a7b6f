use alloc::string::String;
use core::fmt;

/// Error type shared across the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument violates the operation's contract (shape mismatch,
    /// out-of-range index, malformed schedule, ...).
    InvalidArgument(String),
    /// A run configuration violates its invariants. Raised before any
    /// model call is made.
    InvalidConfig(String),
    /// A cached value was requested but the cache is empty or was never
    /// populated.
    CacheMiss(String),
    /// An Euler step was requested from a state already at step index 0.
    AlreadyTerminal,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::CacheMiss(msg) => write!(f, "cache miss: {msg}"),
            Error::AlreadyTerminal => write!(f, "state is already at step index 0"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! invalid_config {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidConfig(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid_arg;
pub(crate) use invalid_config;
