//! File formats, configuration, and command implementations for the
//! `convirt` binary.
//!
//! The numeric pipeline lives in `convirt-core`; this crate adds everything
//! that touches the operating system:
//!
//! * [`config`] — the `key = value` run-configuration format and its
//!   canonical echo (the `effective-config.txt` sidecar).
//! * [`pgm`] — binary 8-bit P5 image files.
//! * [`corpus_io`] — the corpus directory layout (manifest, images, reports,
//!   labels, classes, queries).
//! * [`checkpoint`] — self-describing parameter checkpoints with checksums.
//! * [`csvio`] — history/metrics/embeddings CSVs and the run manifest.
//! * [`parallel`] — a threaded view-preparation backend with bitwise-serial
//!   results.
//! * [`logging`] — stderr logging via `CONVIRT_LOG`.
//! * [`commands`] — one function per subcommand.
//!
//! Every command writes its effective configuration beside its outputs;
//! re-running with that sidecar as `--config` reproduces the outputs
//! byte for byte.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_io;
pub mod csvio;
pub mod logging;
pub mod parallel;
pub mod pgm;

use std::fmt;

/// Failure of a command, tagged with a stable category for the
/// machine-parseable error line (`error: <category>: <message>`).
#[derive(Debug)]
pub enum CliError {
    /// Configuration file problems (unknown keys, ranges, malformed lines).
    Config(config::ConfigError),
    /// Checkpoint file problems (corruption, truncation, shape mismatches).
    Checkpoint(checkpoint::CheckpointError),
    /// Filesystem problems and malformed data files.
    Io(std::io::Error),
    /// Contract violations raised by the numeric pipeline.
    Core(convirt_core::Error),
    /// Missing or inconsistent command inputs.
    Usage(String),
    /// The command ran to completion and the result is a failure (e.g. a
    /// gradient check out of tolerance, a training run that diverged).
    Failed(String),
}

impl CliError {
    /// Stable category token of the error line.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Io(_) => "io",
            CliError::Core(_) => "core",
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "failed",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Checkpoint(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Failed(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CliError::Checkpoint(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<convirt_core::Error> for CliError {
    fn from(e: convirt_core::Error) -> Self {
        CliError::Core(e)
    }
}
