mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::Cli;

/// Failure of a command, carrying its exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<snape_core::Error> for CliError {
    fn from(e: snape_core::Error) -> Self {
        use snape_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Argument(_) | E::Parse { .. } | E::Model(_) | E::AxisMismatch(_) | E::DerivativeOrder { .. } => {
                CliError::Usage(msg)
            }
            E::Domain { .. } | E::MissingExogenous(_) | E::Format(_) | E::Io(_) => CliError::Data(msg),
            E::Bootstrap { .. } => CliError::NotConverged(msg),
            E::Numerical(_) | E::DegenerateTerm(_) | E::Simulation(_) => CliError::Numerical(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("snape: {e}");
            ExitCode::from(e.code())
        }
    }
}
