//! Linear matrix inequality modeling and solving.
//!
//! [`expr`] builds affine block-matrix expressions in named matrix
//! variables, [`assemble`] validates and vectorizes them into a product of
//! PSD cones, [`solve`] runs Clarabel on the result and re-checks any
//! claimed witness independently, and [`sdpa`] dumps the assembled form
//! for external solvers.

pub mod assemble;
pub mod expr;
pub mod sdpa;
pub mod solve;

pub use assemble::{
    assemble, ConeInfo, LmiConstraint, LmiProblem, Sense, StandardForm, VarSlot,
};
pub use expr::{BlockExpr, Entry, MatrixVar, Term, VarKind};
pub use sdpa::to_sdpa_sparse;
pub use solve::{
    check_witness, solve_feasibility, solve_with, sym_eig_range, witness_ok, FeasStatus,
    FeasibilityResult, SlackReport, SolveDiagnostics, SolveOptions,
};

#[derive(Debug, thiserror::Error)]
pub enum LmiError {
    #[error("problem structure: {0}")]
    Structure(String),
    #[error("witness: {0}")]
    Witness(String),
    #[error("solver: {0}")]
    Solver(String),
}
