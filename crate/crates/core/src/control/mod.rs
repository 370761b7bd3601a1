//! Adjoint equations, the Hamiltonian, maximum-principle checks and
//! spike-variation experiments.

mod adjoint;
mod hamiltonian;
mod orders;
mod variational;

pub use adjoint::{
    build_adjoint, build_weighted_adjoint, solve_adjoint, trajectory_state, AdjointSolution, AdjointWeights,
    ConstraintSlopes, FrozenGradients,
};
pub(crate) use hamiltonian::check_weighted_smp;
pub use hamiltonian::{check_smp, eval_hamiltonian, probe_grid, Offender, SmpReport};
pub use orders::{
    estimate_orders, FitStatus, Measurement, OrderClass, OrderFit, Quantity, SpikeOptions, SpikePoint, SpikeReport,
    CENSOR_SE, FIRST_ORDER_SLOPE, RESOLUTION_FACTOR,
};
pub use variational::{
    duality_check, solve_variational_equation, solve_variational_with, spike_perturb, variational_inequality_lhs,
    variational_system, DualityCheck, Forcing, VariationalSolution,
};
