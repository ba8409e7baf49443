//! Solvers, optimality certificates, and restricted-isometry diagnostics for
//! LASSO-type programs.
//!
//! The central object is the convex program
//!
//! ```text
//!     minimize over z :  (1/q) ||y - A z||_p^q  +  (lambda/r) ||B^{-1} z||_1^r
//! ```
//!
//! with a measurement matrix `A` (m rows, N columns), an invertible dictionary
//! `B` (N by N), exponents `1 <= p <= 2`, `q >= 1`, `r >= 1`, and a positive
//! weight `lambda`. Classical instances are recovered by fixing exponents:
//! `(p, q, r) = (2, 2, 1)` is the standard LASSO, `(2, 1, 1)` the square-root
//! LASSO, `(1, 1, 1)` the LAD-LASSO, and `r = 2` the squared-penalty variant.
//!
//! The crate is organised around a small number of commitments:
//!
//! * [`model`] carries problem data and the sparsity-cap arithmetic that
//!   converts an isometry ratio into a bound on certified support sizes.
//! * [`prox`] implements the scalar kernels (signed powers, the proximal map
//!   of `(mu/r) ||.||_1^r`) that everything else composes.
//! * [`solver`] runs proximal (sub)gradient iterations with optional
//!   acceleration and an exact polish stage, plus a coordinate-descent
//!   reference for the standard LASSO.
//! * [`certificate`] checks first-order optimality of a candidate point and
//!   reports quantified violations rather than a bare boolean.
//! * [`rip`] computes or estimates restricted isometry constants in the
//!   `||.||_p`-to-`||.||_2` sense and derives null-space-property constants.
//! * [`ensembles`] draws seeded random instances (matrices, dictionaries,
//!   sparse ground truths, calibrated noise) reproducibly.
//! * [`harness`] wires the above into named experiments with CSV/JSON output.
//!
//! All randomness flows through explicit `u64` seeds and a fixed counter-based
//! stream splitter, so every public entry point is deterministic: same inputs,
//! same bytes out.

pub mod certificate;
pub mod ensembles;
pub mod harness;
pub mod io;
pub mod model;
pub mod prox;
pub mod rip;
pub mod solver;

mod error;

pub use error::{Error, Result};
