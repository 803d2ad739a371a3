//! Command-line surface: configuration, run pipelines and reports.

pub mod config;
pub mod report;
pub mod run;

/// Domain errors exit with 1, I/O failures with 2.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}
