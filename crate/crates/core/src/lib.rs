//! Solvers for time-dependent mean field games with non-separable
//! congestion Hamiltonians on the flat torus.
//!
//! The discretization is the monotone finite-difference scheme: centered
//! Laplacian, Engquist-Osher upwinding for the Hamiltonian and the transport
//! term, and implicit Euler in time. Three outer iterations are provided:
//! two policy iterations ([`solvers::pi1_solve`], [`solvers::pi2_solve`]) that
//! only ever solve linear equations, and a fixed-point iteration
//! ([`solvers::fixed_point_solve`]) that solves the nonlinear HJB equation by
//! Newton's method.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod grid;
pub mod kernels;
pub mod linsys;
pub mod models;
pub mod solvers;

pub use diagnostics::{ConvergenceReport, IterationRecord, RateFit, SweepResult, SweepSpec};
pub use grid::{ScalarField, ScalarTimeField, SpaceGrid, StaggeredPolicy, TimeGrid};
pub use kernels::{NewtonSettings, PolicyTimeField};
pub use linsys::{LinearMethod, LinearSolveSettings, SparseOperator};
pub use models::{
    build_scenario, HamiltonianModel, ScenarioName, ScenarioOverrides, ScenarioPreset,
};
pub use solvers::{Algorithm, Solution, SolveStatus, SolverConfig, SolverError};
