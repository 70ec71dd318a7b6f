use std::fmt;

/// Benchmark-side failures, split by how the CLI should exit: configuration
/// problems exit 2, runtime problems exit 1.
#[derive(Debug)]
pub enum BenchError {
    /// Unusable configuration or command line.
    Config(String),
    /// Failure while executing a valid scenario.
    Runtime(String),
    Io(std::io::Error),
}

impl BenchError {
    pub fn config(msg: impl Into<String>) -> Self {
        BenchError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        BenchError::Runtime(msg.into())
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Runtime(_) | BenchError::Io(_) => 1,
        }
    }
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::Config(msg) => write!(f, "config error: {msg}"),
            BenchError::Runtime(msg) => write!(f, "runtime error: {msg}"),
            BenchError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for BenchError {}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Io(e)
    }
}

impl From<regione_core::Error> for BenchError {
    fn from(e: regione_core::Error) -> Self {
        match e {
            regione_core::Error::InvalidConfig(_) => BenchError::Config(e.to_string()),
            _ => BenchError::Runtime(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
