//! IO, file formats, and the benchmark CLI around `regione-core`: scenario
//! configs, binary tensor files, gamma tables, PGM mask dumps, toy-weight
//! snapshots, and JSON run reports.

pub mod cli;
pub mod config;
pub mod error;
pub mod gamma_file;
pub mod logging;
pub mod pgm;
pub mod report;
pub mod scenario;
pub mod tensor_file;
pub mod weights_file;

pub use error::{BenchError, Result};
