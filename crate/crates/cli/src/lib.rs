//! Command-line front ends `fracop` and `herglotz` over `herglotz-core`.
//!
//! Exit status: 0 success, 2 configuration or input error, 3 numerical
//! failure (including a solve that did not converge), 4 a residual above
//! `--fail-above`.

pub mod config;
pub mod error;
pub mod fracop;
pub mod herglotz;
pub mod report;

pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFICATION};
