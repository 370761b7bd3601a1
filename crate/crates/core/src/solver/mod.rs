//! Regression Monte Carlo solver for forward-backward systems driven by
//! sub-diffusion, and a deterministic oracle for linear systems.

pub mod bvp;
pub mod control;
mod cost;
mod fbsde;
pub mod regression;
mod residual;
pub mod stats;

pub use bvp::{solve_linear_bvp, BvpSolution, LinearBvp};
pub use control::{ControlDomain, ControlProcess};
pub use cost::{expected_cost, path_costs, trapezoid};
pub use fbsde::{solve_fbsde, Component, FbsdeSolution, SolverOptions, CROSS_FIT_MIN};
pub use residual::{residual_check, ResidualReport};
pub use stats::Estimate;
