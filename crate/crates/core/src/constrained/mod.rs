//! Equality-constrained control: penalized cost, the control metric, a finite
//! Ekeland search, multiplier extraction and the constrained maximum-principle
//! check.

mod ekeland;
mod multipliers;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::solver::{expected_cost, Estimate, FbsdeSolution};
use crate::subordination::TimeGrid;

pub use ekeland::{ekeland_search, Clause, EkelandCertificate, MemberRecord};
pub use multipliers::{
    build_constrained_adjoint, check_constrained_smp, extract_multipliers, solve_constrained_adjoint,
    ConstrainedSmpReport, MultiplierEstimate, MultiplierTriple,
};

/// Values closer than this count as equal in the control metric.
pub const METRIC_TOL: f64 = 1e-12;

/// `G(s) = slope * s + offset`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    pub slope: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn new(slope: f64, offset: f64) -> Self {
        Self { slope, offset }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.slope * s + self.offset
    }

    pub fn is_zero(&self) -> bool {
        self.slope == 0.0 && self.offset == 0.0
    }
}

/// Constraints `E[G1(x(T))] = 0` and `E[G0(y(0))] = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    /// `G1`, applied to the terminal state.
    #[serde(default)]
    pub terminal: AffineMap,
    /// `G0`, applied to the initial utility.
    #[serde(default)]
    pub initial: AffineMap,
}

impl ConstraintSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_trivial(&self) -> bool {
        self.terminal.is_zero() && self.initial.is_zero()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.terminal.slope,
            self.terminal.offset,
            self.initial.slope,
            self.initial.offset,
        ];
        if all.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::param("constraints", "constraint coefficients must be finite"))
        }
    }

    /// Ensemble estimates of `E[G1(x(T))]` and `E[G0(y(0))]`.
    pub fn residuals(&self, solution: &FbsdeSolution) -> ConstraintResiduals {
        let n = solution.grid.steps();
        let g1: Vec<f64> = solution.x.iter().map(|p| self.terminal.eval(p[n])).collect();
        let g0: Vec<f64> = solution.y.iter().map(|p| self.initial.eval(p[0])).collect();
        ConstraintResiduals {
            terminal: solution.estimate(&g1),
            initial: solution.estimate(&g0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub terminal: Estimate,
    pub initial: Estimate,
}

/// `J_rho(v) = sqrt(E[G1(x(T))]^2 + E[G0(y(0))]^2 + (J(v) - J(u) + rho)^2)` with its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PenalizedCost {
    pub value: f64,
    pub residuals: ConstraintResiduals,
    pub cost: Estimate,
    /// `J(v) - J(u) + rho`.
    pub gap: f64,
}

/// Penalized cost of the solved trajectory of `v` against the baseline cost `J(u)`.
pub fn penalized_cost(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    solution: &FbsdeSolution,
    baseline_cost: f64,
    rho: f64,
) -> Result<PenalizedCost> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::param("rho", format!("must be finite and >= 0, got {rho}")));
    }
    let residuals = constraints.residuals(solution);
    let cost = expected_cost(coeffs, solution)?;
    let gap = cost.mean - baseline_cost + rho;
    let value = (residuals.terminal.mean.powi(2) + residuals.initial.mean.powi(2) + gap * gap).sqrt();
    Ok(PenalizedCost {
        value,
        residuals,
        cost,
        gap,
    })
}

/// `E[ mu{t : v1(t) != v2(t)} ]` on node values `[path][node]`, each node
/// standing for the cell that starts at it.
pub fn control_metric(v1: &[Vec<f64>], v2: &[Vec<f64>], grid: &TimeGrid) -> Result<f64> {
    if v1.len() != v2.len() || v1.is_empty() {
        return Err(Error::Domain(format!(
            "control tables have {} and {} paths",
            v1.len(),
            v2.len()
        )));
    }
    let n = grid.steps();
    let mut total = 0.0;
    for (a, b) in v1.iter().zip(v2) {
        if a.len() < n || b.len() < n {
            return Err(Error::Domain("control table is shorter than the grid".into()));
        }
        total += (0..n)
            .filter(|&i| (a[i] - b[i]).abs() > METRIC_TOL)
            .map(|i| grid.dt(i))
            .sum::<f64>();
    }
    Ok(total / v1.len() as f64)
}
