//! Desk-scale simulator for a compact U(1) gauge theory with Higgs matter on
//! small 2-d lattices, together with its bosonic-atom realization.
//!
//! The crate is organized bottom-up:
//!
//! * [`lattice`] — square-lattice geometry (vertices, oriented links, plaquettes);
//! * [`hilbert`] — truncated local state spaces and global basis enumeration,
//!   both Gauss-law-constrained sector bases and unconstrained Fock bases;
//! * [`operators`] — sparse matrices for field, ladder, and composite operators;
//! * [`hamiltonians`] — the four model Hamiltonians and the coupling maps
//!   between microscopic and target parameters;
//! * [`solvers`] — Lanczos eigensolver and Krylov real-time propagator;
//! * [`observables`] — measurement layer (field maps, string diagnostics,
//!   time series);
//! * [`effective`] — projector/resolvent perturbative expansion on the
//!   hard-core-penalty ground sector, orders 1..4, with analytic cross-checks.
//!
//! Everything is deterministic: bases enumerate in a fixed canonical order,
//! randomized starts are seeded, and parallel kernels reduce in a fixed order.

pub mod error;
pub mod lattice;
pub mod hilbert;
pub mod operators;
pub mod hamiltonians;
pub mod solvers;
pub mod observables;
pub mod effective;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
