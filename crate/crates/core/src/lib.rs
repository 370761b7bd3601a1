//! Stochastic optimal control of fully coupled forward-backward SDEs driven by
//! sub-diffusion, with regression Monte Carlo solvers and deterministic oracles.

pub mod casestudy;
pub mod constrained;
pub mod control;
pub mod error;
pub mod model;
pub mod rng;
pub mod solver;
pub mod subordination;

pub use error::{Error, Result};
