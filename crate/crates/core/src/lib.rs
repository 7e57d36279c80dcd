//! Co-rotating N-fold vortex patches of the generalized surface
//! quasi-geostrophic equation.
//!
//! The crate computes maximizers of the Riesz energy on one fold of the
//! N-fold symmetric plane under mass and impulse constraints, first through
//! a continuation in the penalization exponent `p` and then through a
//! bathtub (patch) stage, and provides the diagnostics used to check their
//! asymptotic behaviour as the patch intensity `lambda` grows.

pub mod diagnostics;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod kernel;
pub mod numeric;
pub mod rearrange;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{ScalarField, SectorGrid};
pub use kernel::{KernelParams, KernelTable};
pub use solver::{solve_patch, PatchSolution, SolverConfig, SolverReport, SolverState};
