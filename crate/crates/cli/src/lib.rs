//! Desk-scale experimental pipeline over the `regroup` library. Each
//! subcommand is a function of a [`Settings`] value so it can be driven from
//! the binary, from tests, or from other programs.

pub mod commands;
pub mod config;
pub mod data;

pub use commands::{
    attack, build, calibrate, eval, infer, train, AttackOutput, BuildOutput, CalibrationOutput, EvalOutput,
    InferOutput, TrainOutput,
};
pub use config::Settings;

/// Failures split by exit code: 2 for invalid input, 3 for unreadable or
/// unwritable files.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<regroup::Error> for CliError {
    fn from(e: regroup::Error) -> Self {
        match e {
            regroup::Error::Io(_) | regroup::Error::Format { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
