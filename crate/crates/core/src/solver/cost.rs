use rayon::prelude::*;

use super::fbsde::FbsdeSolution;
use super::stats::Estimate;
use crate::error::Result;
use crate::model::CoefficientSet;
use crate::subordination::TimeGrid;

/// Trapezoidal integral of node values over the grid.
pub fn trapezoid(grid: &TimeGrid, values: &[f64]) -> f64 {
    (0..grid.steps())
        .map(|i| 0.5 * (values[i] + values[i + 1]) * grid.dt(i))
        .sum()
}

/// Per-path cost `int g dt + h_T(x(T)) + gamma(y(0))` of a solved trajectory.
///
/// Missing cost terms count as zero.
pub fn path_costs(coeffs: &CoefficientSet, solution: &FbsdeSolution) -> Result<Vec<f64>> {
    let n = solution.grid.steps();
    (0..solution.paths())
        .into_par_iter()
        .map(|m| {
            let running: Vec<f64> = (0..=n)
                .map(|i| CoefficientSet::eval_opt(&coeffs.running_cost, &solution.state(m, i)))
                .collect::<Result<_>>()?;
            Ok(trapezoid(&solution.grid, &running)
                + CoefficientSet::eval_opt(&coeffs.terminal_cost, &solution.state(m, n))?
                + CoefficientSet::eval_opt(&coeffs.initial_cost, &solution.state(m, 0))?)
        })
        .collect()
}

/// Monte Carlo estimate of the cost functional `J`.
pub fn expected_cost(coeffs: &CoefficientSet, solution: &FbsdeSolution) -> Result<Estimate> {
    Ok(solution.estimate(&path_costs(coeffs, solution)?))
}
