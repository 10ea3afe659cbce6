//! PAI-style command line over the easyasr pipeline.
//!
//! ```text
//! easyasr -name ASR_Train -Dconfig=model_config -Dexport=out -Dtrain_data=data
//! easyasr predict -Dmodel_name=base -Dinput=a.wav
//! ```

mod args;
mod commands;

pub use args::{parse_args, parse_command_line, usage, Command, CommandInvocation, Component, UNSUPPORTED_COMPONENT};
pub use commands::{execute, run};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed invocation; exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// The command ran and failed; exit code 1.
    #[error("{0}")]
    Operation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Operation(_) => 1,
        }
    }
}

macro_rules! operational {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Operation(e.to_string())
            }
        }
    )*};
}

operational!(
    easyasr_core::RecordError,
    easyasr_core::TrainerError,
    easyasr_core::RegistryError,
    easyasr_core::ModelError,
    easyasr_core::AudioError,
    easyasr_core::MetricsError
);

/// Parses `argv` (without the program name) and runs it.
pub fn main_with_args<S: AsRef<str>>(argv: &[S]) -> i32 {
    match parse_args(argv) {
        Ok(cmd) => run(&cmd),
        Err(e) => {
            eprintln!("easyasr: {e}");
            e.exit_code()
        }
    }
}
