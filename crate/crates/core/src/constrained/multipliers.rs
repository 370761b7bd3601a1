use serde::Serialize;

use super::{penalized_cost, ConstraintResiduals, ConstraintSpec, PenalizedCost};
use crate::control::{
    build_weighted_adjoint, check_weighted_smp, AdjointSolution, AdjointWeights, ConstraintSlopes, SmpReport,
};
use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::solver::{solve_fbsde, ControlProcess, FbsdeSolution, SolverOptions};
use crate::subordination::Ensemble;

/// Multipliers `(psi1, psi2, psi3)` for the terminal constraint, the initial
/// constraint and the cost, normalized to unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierTriple {
    pub terminal: f64,
    pub initial: f64,
    pub cost: f64,
}

impl MultiplierTriple {
    /// The unconstrained case `(0, 0, 1)`.
    pub fn unconstrained() -> Self {
        Self {
            terminal: 0.0,
            initial: 0.0,
            cost: 1.0,
        }
    }

    /// Normalizes `(terminal, initial, cost)`; the zero vector is rejected.
    pub fn normalized(terminal: f64, initial: f64, cost: f64) -> Result<Self> {
        let norm = (terminal * terminal + initial * initial + cost * cost).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::param("multipliers", "multipliers must not all vanish"));
        }
        Ok(Self {
            terminal: terminal / norm,
            initial: initial / norm,
            cost: cost / norm,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.terminal.powi(2) + self.initial.powi(2) + self.cost.powi(2)).sqrt()
    }

    fn weights(&self) -> AdjointWeights {
        AdjointWeights {
            cost: self.cost,
            terminal_constraint: self.terminal,
            initial_constraint: self.initial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierEstimate {
    /// `2 E[G1(x_rho(T))] / D`, `2 E[G0(y_rho(0))] / D`, `2 (J(u_rho) - J(u) + rho) / D`
    /// with `D = J_rho(u_rho^eps) + J_rho(u_rho)`.
    pub raw: [f64; 3],
    /// Length of `raw`; tends to 1 as the perturbation shrinks.
    pub raw_norm: f64,
    pub normalized: MultiplierTriple,
    pub penalized: PenalizedCost,
    pub penalized_perturbed: PenalizedCost,
}

/// Multipliers from the penalized costs of `u_rho` and of its perturbation `u_rho^eps`.
pub fn extract_multipliers(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    selected: &FbsdeSolution,
    perturbed: &FbsdeSolution,
    baseline_cost: f64,
    rho: f64,
) -> Result<MultiplierEstimate> {
    let penalized = penalized_cost(coeffs, constraints, selected, baseline_cost, rho)?;
    let penalized_perturbed = penalized_cost(coeffs, constraints, perturbed, baseline_cost, rho)?;
    let denom = penalized.value + penalized_perturbed.value;
    if denom <= 0.0 {
        return Err(Error::DegeneratePenalization);
    }
    let raw = [
        2.0 * penalized.residuals.terminal.mean / denom,
        2.0 * penalized.residuals.initial.mean / denom,
        2.0 * penalized.gap / denom,
    ];
    let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(MultiplierEstimate {
        raw,
        raw_norm,
        normalized: MultiplierTriple::normalized(raw[0], raw[1], raw[2])?,
        penalized,
        penalized_perturbed,
    })
}

/// Adjoint with the cost gradients scaled by `psi3` and the boundary data
///
/// ```text
/// p(0) = -psi2 G0_y(y(0)) - psi3 gamma_y(y(0))
/// q(T) =  psi1 G1_x(x(T)) - phi_x(x(T)) p(T) + psi3 h_T,x(x(T))
/// ```
pub fn build_constrained_adjoint(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    trajectory: &FbsdeSolution,
    psi: &MultiplierTriple,
) -> Result<CoefficientSet> {
    let paths = trajectory.paths();
    let slopes = ConstraintSlopes {
        terminal: vec![constraints.terminal.slope; paths],
        initial: vec![constraints.initial.slope; paths],
    };
    build_weighted_adjoint(coeffs, trajectory, psi.weights(), &slopes)
}

pub fn solve_constrained_adjoint(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    trajectory: &FbsdeSolution,
    psi: &MultiplierTriple,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<AdjointSolution> {
    let adjoint = build_constrained_adjoint(coeffs, constraints, trajectory, psi)?;
    let sol = solve_fbsde(&adjoint, &ControlProcess::constant(0.0), ensemble, options)?;
    Ok(AdjointSolution::from_solution(sol))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedSmpReport {
    pub psi: MultiplierTriple,
    pub smp: SmpReport,
    pub residuals: ConstraintResiduals,
}

/// Maximum-principle check with `H = q b - p f + psi3 g`, reported alongside the
/// constraint residuals of the trajectory.
pub fn check_constrained_smp(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    trajectory: &FbsdeSolution,
    adjoint: &AdjointSolution,
    psi: &MultiplierTriple,
    probes: &[f64],
    tol: f64,
) -> Result<ConstrainedSmpReport> {
    Ok(ConstrainedSmpReport {
        psi: *psi,
        smp: check_weighted_smp(coeffs, trajectory, adjoint, probes, tol, psi.cost)?,
        residuals: constraints.residuals(trajectory),
    })
}
