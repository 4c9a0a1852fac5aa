//! Crate-wide error type.
//!
//! Variants are grouped by how a front end should react to them (bad input,
//! infeasible physics request, resource guard, solver trouble) rather than by
//! the module that raised them.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed geometry, truncation, or coupling input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A requested charge sector cannot be populated at all.
    #[error("infeasible sector: {0}")]
    InfeasibleSector(String),

    /// Enumeration or dense work refused because a cheap bound exceeds the cap.
    #[error("resource guard: estimated size {estimate} exceeds cap {cap} ({context})")]
    ResourceGuard {
        estimate: u128,
        cap: u128,
        context: String,
    },

    /// Iterative solver failed to reach the requested tolerance.
    #[error("solver did not converge: {context} (best residual {best_residual:.3e}, tolerance {tolerance:.3e})")]
    SolverNonConvergence {
        context: String,
        best_residual: f64,
        tolerance: f64,
    },

    /// Operator algebra misuse: basis mismatch, non-Hermitian input, etc.
    #[error("operator error: {0}")]
    Operator(String),

    /// Configuration-file problems (front-end parsing and validation).
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Shorthand for [`Error::InvalidInput`] with formatted text.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
