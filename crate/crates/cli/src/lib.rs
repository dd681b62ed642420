//! File formats and commands behind the `tcsv` binary.

mod commands;
mod config;
mod files;

use std::path::PathBuf;

pub use commands::{cmd_diagnose, cmd_fit, cmd_simulate, DiagnoseOptions};
pub use config::{DataOptions, RunConfig, SimulateOptions};
pub use files::{read_trace, write_trace, TraceTable};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] timechange_sv::Error),

    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}
