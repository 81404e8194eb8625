//! Matrix generalized analytic functions on planar grids: Pompeiu
//! operators, Neumann-series solvers, Moutard potentials and transforms,
//! gauge reductions, and residual/convergence measurement.
//!
//! Conjugation is entrywise throughout (`conj(M)`, never the adjoint).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cauchy;
pub mod error;
pub mod grid;
pub mod moutard;
pub mod potential;
pub mod scenario;
pub mod seeds;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
pub use grid::{Grid, MatrixField, StencilMask};
pub use scenario::Scenario;
