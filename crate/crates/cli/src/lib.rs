//! Experiment harness for the `drive` command: configuration, metrics,
//! run/ablation drivers and report generation.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod plot;

/// Command failure, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or unreadable configuration; exit status 1.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running; exit status 2.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}
