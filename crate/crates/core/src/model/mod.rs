//! Coefficient sets, the linear cash-flow model and checks of the standing assumptions.

pub mod catalog;
pub mod checks;
mod coefficients;
pub mod linear;

pub use checks::{
    check_gradient_monotonicity, check_lipschitz, check_monotonicity, DomainBox, GradientVerdict, InequalityVerdict,
    MonotonicityReport, Witness,
};
pub use coefficients::{Coefficient, CoefficientSet, Feature, Gradient, InitialValue, State, FD_STEP};
pub use linear::{LinearModelSpec, TargetProfile};
