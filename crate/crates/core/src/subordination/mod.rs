//! Driving noise: subordinators, their inverses, the overshoot process and
//! the time-changed Brownian motion.

mod activity;
mod bundle;
mod grid;
mod levy;
pub mod path;

pub use activity::{empirical_activity_rate, ActivityAccumulator, ActivityEstimate, SideEstimate};
pub use bundle::{
    brownian_path, sample_subdiffusion, simulate_path, simulate_path_with_subordinator, Ensemble, PathBundle,
    DEFAULT_REFINEMENT,
};
pub use grid::TimeGrid;
pub use levy::{sample_positive_stable, LevyFamily, LevySpec};
pub use path::{invert_subordinator, overshoot_process, sample_subordinator, SubordinatorPath, FLAT_TOL};
