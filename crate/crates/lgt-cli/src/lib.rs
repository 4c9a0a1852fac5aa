//! Command-line front end: config loading, mode execution, artifact and
//! manifest writing. The binary in `main.rs` is a thin argument-parsing shell
//! around [`runner::run`]; everything testable lives here.

pub mod config;
pub mod runner;

use std::fmt;

/// Failure families, each mapped to a distinct process exit code:
///
/// | code | meaning |
/// |------|---------|
/// | 1    | I/O trouble, output-directory collision, internal operator error |
/// | 2    | config rejected (schema, domain bounds, or lattice construction) |
/// | 3    | requested sector is empty |
/// | 4    | resource guard refused the basis or matrix size |
/// | 5    | a solver failed to reach its tolerance |
#[derive(Debug)]
pub enum CliError {
    /// Schema/validation errors, already aggregated into a full list.
    Config(Vec<String>),
    /// Errors surfaced by the simulation layer.
    Domain(lgt_core::Error),
    /// Filesystem trouble while reading inputs or writing artifacts.
    Io(String),
    /// The output directory already holds files; refusing to overwrite.
    OutputCollision(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(e) => match e {
                lgt_core::Error::Config(_) | lgt_core::Error::InvalidInput(_) => 2,
                lgt_core::Error::InfeasibleSector(_) => 3,
                lgt_core::Error::ResourceGuard { .. } => 4,
                lgt_core::Error::SolverNonConvergence { .. } => 5,
                lgt_core::Error::Operator(_) => 1,
            },
            CliError::Io(_) | CliError::OutputCollision(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(errors) => {
                writeln!(f, "config rejected ({} problem(s)):", errors.len())?;
                for e in errors {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::OutputCollision(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<lgt_core::Error> for CliError {
    fn from(e: lgt_core::Error) -> Self {
        CliError::Domain(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
