//! Ergodic and discounted HJB solvers for the limiting diffusion on a
//! truncated grid.

mod grid;
mod hamiltonian;
mod operator;
mod solver;

pub use grid::{write_fields, ControlField, Grid, ValueField, MAX_GRID_POINTS};
pub use hamiltonian::minimize_hamiltonian;
pub use operator::{
    ControlledChain, DriftScheme, Perturbation, StencilReport, TruncationConfig,
    CENTRAL_RATE_MARGIN,
};
pub use solver::{
    epsilon_bound_check, solve_discounted, solve_ergodic, solve_ergodic_chain, truncation_sweep,
    verification_residual, EpsilonReport, EpsilonRow, ErgodicSolution, SolverOptions,
    TruncationReport, TruncationRow,
};
