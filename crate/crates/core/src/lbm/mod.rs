//! D2Q9 lattice-Boltzmann engine: streaming with bounce-back and porous
//! links, BGK collision, Dirichlet re-initialization, and the convergence
//! loop that turns a [`BoundaryGrid`](crate::raster::BoundaryGrid) into a
//! steady velocity field.

pub mod bench;
pub mod d2q9;
mod solver;
mod state;

pub use d2q9::{equilibrium, moments, E, OPPOSITE, Q, W};
pub use solver::{
    collide, impose_boundaries, initial_state, solve, stream, Schedule, Solution, Solver, SolverError,
    SolverParams, StepReport, TauMode, UnitScale, BLOWUP_LIMIT, REFERENCE_DENSITY,
};
pub use state::LatticeState;
