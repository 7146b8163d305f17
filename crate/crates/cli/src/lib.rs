//! Command-line front end for `flownet-core`: scenario files, traces and
//! the `flownet` subcommands.

pub mod args;
pub mod bundled;
pub mod commands;
pub mod scenario;
pub mod trace;

use flownet_core::routing::CheckError;
use flownet_core::{AllocationError, FeasibilityError, SimulationError, TraceError};
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const INPUT_ERROR: u8 = 1;
    pub const NON_TRANSFERRING: u8 = 2;
    pub const UNDETERMINED: u8 = 3;
    /// Feasibility and allocation report an infeasible inflow with the same
    /// code as a non-transferring run.
    pub const INFEASIBLE: u8 = 2;
    /// Routing verification found violations.
    pub const VIOLATIONS: u8 = 2;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{}", invalid_message(path, *line, message))]
    Invalid {
        path: String,
        line: Option<usize>,
        message: String,
    },
    #[error("could not serialize scenario: {0}")]
    Serialize(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("trace output: {0}")]
    Csv(#[from] csv::Error),
}

fn invalid_message(path: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("{path}:{line}: {message}"),
        None => format!("{path}: {message}"),
    }
}
