//! Stderr logging controlled by the `CONVIRT_LOG` environment variable.
//!
//! Levels: `quiet` (errors only), `info` (progress lines, the default), and
//! `debug` (adds per-step detail). Unrecognized values fall back to `info`.
//! All diagnostics go to stderr so stdout stays reserved for result tables.

/// Verbosity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    /// Errors only.
    Quiet,
    /// Progress lines.
    Info,
    /// Per-step detail.
    Debug,
}

/// Reads `CONVIRT_LOG`; absent or unrecognized values mean `info`.
pub fn level_from_env() -> LogLevel {
    match std::env::var("CONVIRT_LOG").as_deref() {
        Ok("quiet") => LogLevel::Quiet,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Info,
    }
}

/// A leveled stderr writer.
#[derive(Debug, Clone, Copy)]
pub struct Logger {
    level: LogLevel,
}

impl Logger {
    /// A logger at the given threshold.
    pub fn new(level: LogLevel) -> Self {
        Logger { level }
    }

    /// A logger at the environment-selected threshold.
    pub fn from_env() -> Self {
        Logger::new(level_from_env())
    }

    /// Emits a progress line at `info`.
    pub fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Emits a detail line at `debug`.
    pub fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Debug {
            eprintln!("{}", msg.as_ref());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_order_as_expected() {
        assert!(LogLevel::Quiet < LogLevel::Info);
        assert!(LogLevel::Info < LogLevel::Debug);
    }
}
