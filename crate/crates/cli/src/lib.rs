//! Command-line front end for `frobenius-core`: problem-file parsing,
//! plain-text reports and leaf CSV output.

pub mod commands;
pub mod error;
pub mod family;
pub mod leafcsv;
pub mod problem;
pub mod report;

pub use commands::{run, Options, Outcome};
pub use error::{CliError, Result};
pub use problem::{Kind, ProblemFile};
