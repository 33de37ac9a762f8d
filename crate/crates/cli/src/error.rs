use std::path::PathBuf;
use std::process::ExitCode;

use herglotz_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Command-line parse failures, including `--help` and `--version`
    /// (which clap reports as errors with exit status 0).
    #[error("{0}")]
    Usage(#[from] clap::Error),

    #[error("malformed config {path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("unknown key `{key}` in {path} (at `{at}`)")]
    UnknownKey { path: PathBuf, key: String, at: String },

    #[error("missing required field `{field}` in {path}")]
    MissingField { path: PathBuf, field: String },

    #[error("invalid value for `{field}`: {message}")]
    Domain { field: String, message: String },

    #[error("conflicting settings: {0}")]
    Conflict(String),

    #[error("cannot read {path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },

    #[error("{0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("verification failed: {metric} = {value:e} exceeds --fail-above {threshold:e}")]
    Verification { metric: String, value: f64, threshold: f64 },
}

impl CliError {
    pub fn domain(field: impl Into<String>, message: impl ToString) -> Self {
        CliError::Domain {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) => e.exit_code().clamp(0, 255) as u8,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Verification { .. } => EXIT_VERIFICATION,
            _ => EXIT_CONFIG,
        }
    }

    /// Prints the error (or help text) and converts it into the process
    /// exit status.
    pub fn report(self) -> ExitCode {
        match &self {
            CliError::Usage(e) => {
                let _ = e.print();
            }
            other => eprintln!("error: {other}"),
        }
        ExitCode::from(self.exit_code())
    }
}

/// Failures of the numerics map to exit 3; everything else the core rejects
/// stems from the inputs.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Evaluation { .. } | CoreError::Setup(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
