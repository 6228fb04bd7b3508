//! Command dispatch, configuration and file I/O for the sampling
//! experiment CLI.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or I/O failure.

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{
    cmd_coeffs, cmd_converge, cmd_curves, cmd_profile, cmd_sample, load_context, Context,
    SampleFlags,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Run(#[from] deis_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 3,
        }
    }
}
