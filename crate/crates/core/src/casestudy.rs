//! Cash management under sub-diffusion: the linear model, its adjoint oracle,
//! the closed-form optimal control and the optimality-gap identity.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{solve_adjoint, AdjointSolution};
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, LinearModelSpec};
use crate::solver::bvp::{constant_matrix, DEFAULT_SUBSTEPS};
use crate::solver::{
    path_costs, solve_fbsde, solve_linear_bvp, trapezoid, BvpSolution, Component, ControlProcess, Estimate,
    FbsdeSolution, LinearBvp, SolverOptions,
};
use crate::subordination::{Ensemble, LevySpec, TimeGrid, DEFAULT_REFINEMENT};

/// A control compared against the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Comparison {
    /// `u* + offset`.
    OptimalOffset {
        offset: f64,
    },
    /// The target profile `l`.
    Target,
    Constant {
        value: f64,
    },
}

impl Comparison {
    pub fn label(&self) -> String {
        match self {
            Comparison::OptimalOffset { offset } => format!("u*{offset:+}"),
            Comparison::Target => "l".into(),
            Comparison::Constant { value } => format!("{value}"),
        }
    }

    pub fn control(&self, optimal: &ControlProcess, model: &LinearModelSpec) -> ControlProcess {
        match self {
            Comparison::OptimalOffset { offset } => optimal.offset(*offset),
            Comparison::Target => {
                let l = model.l.clone();
                ControlProcess::deterministic(move |t| l.at(t))
            }
            Comparison::Constant { value } => ControlProcess::constant(*value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CashStudyConfig {
    pub model: LinearModelSpec,
    pub x0: f64,
    pub levy: LevySpec,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub refinement: usize,
    pub solver: SolverOptions,
    pub comparisons: Vec<Comparison>,
}

impl Default for CashStudyConfig {
    fn default() -> Self {
        Self {
            model: LinearModelSpec::default(),
            x0: 1.0,
            levy: LevySpec::compound_poisson(1.0, 1.0, 0.5).expect("valid default"),
            horizon: 1.0,
            steps: 100,
            paths: 10_000,
            seed: 2024,
            refinement: DEFAULT_REFINEMENT,
            solver: SolverOptions {
                tol: 1e-9,
                picard_max: 60,
                batches: 20,
                ..SolverOptions::default()
            },
            comparisons: vec![
                Comparison::OptimalOffset { offset: 1.0 },
                Comparison::Target,
                Comparison::Constant { value: 0.0 },
            ],
        }
    }
}

impl CashStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.solver.validate()?;
        if !self.x0.is_finite() {
            return Err(Error::param("x0", "initial cash must be finite"));
        }
        if self.paths < 2 {
            return Err(Error::param("paths", "at least two paths are required"));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.steps)
    }

    pub fn ensemble(&self) -> Result<Ensemble> {
        Ensemble::simulate(&self.levy, self.grid()?, 0.0, self.paths, self.seed, self.refinement)
    }
}

pub fn build_cash_model(config: &CashStudyConfig) -> Result<CoefficientSet> {
    config.model.coefficients(config.x0)
}

/// Deterministic adjoint `p' = -m1 p + n1 q`, `q' = m2 p + m1 q`, `p(0) = 1`, `q(T) = -a_slope p(T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CashAdjointOracle {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

pub fn cash_adjoint_oracle(model: &LinearModelSpec, grid: &TimeGrid) -> Result<CashAdjointOracle> {
    let a = constant_matrix([[-model.m1, model.n1], [model.m2, model.m1]]);
    let f = |_: f64| [0.0, 0.0];
    let s = solve_linear_bvp(
        &LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: 1.0,
            slope: -model.a_slope,
            offset: 0.0,
        },
        grid,
        DEFAULT_SUBSTEPS,
    )?;
    Ok(CashAdjointOracle {
        p: s.forward,
        q: s.backward,
    })
}

/// Deterministic state under a deterministic control:
/// `x' = -m1 x - n1 y + c1 u`, `y' = m1 y - m2 x - c2 u`, `x(0) = x0`, `y(T) = a_slope x(T)`.
pub fn cash_state_oracle(
    model: &LinearModelSpec,
    x0: f64,
    control: &ControlProcess,
    grid: &TimeGrid,
) -> Result<BvpSolution> {
    if !control.is_deterministic() {
        return Err(Error::Domain("the state oracle needs a deterministic control".into()));
    }
    let a = constant_matrix([[-model.m1, -model.n1], [-model.m2, model.m1]]);
    let f = |t: f64| {
        let u = control.value(0, 0, t, 0.0, 0.0);
        [model.c1 * u, -model.c2 * u]
    };
    solve_linear_bvp(
        &LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: x0,
            slope: model.a_slope,
            offset: 0.0,
        },
        grid,
        DEFAULT_SUBSTEPS,
    )
}

#[derive(Debug, Clone)]
pub struct CashAdjoint {
    pub monte_carlo: AdjointSolution,
    pub oracle: CashAdjointOracle,
}

/// Monte Carlo adjoint along `trajectory` together with the deterministic oracle.
pub fn solve_cash_adjoint(
    config: &CashStudyConfig,
    coeffs: &CoefficientSet,
    trajectory: &FbsdeSolution,
    ensemble: &Ensemble,
) -> Result<CashAdjoint> {
    Ok(CashAdjoint {
        monte_carlo: solve_adjoint(coeffs, trajectory, ensemble, &config.solver)?,
        oracle: cash_adjoint_oracle(&config.model, ensemble.grid())?,
    })
}

/// `u*(t) = -c1 q(t) + c2 p(t) + l(t)` tabulated on the grid.
pub fn optimal_cash_control(
    model: &LinearModelSpec,
    grid: &TimeGrid,
    oracle: &CashAdjointOracle,
) -> Result<ControlProcess> {
    let values = grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &t)| -model.c1 * oracle.q[i] + model.c2 * oracle.p[i] + model.l.at(t))
        .collect();
    ControlProcess::on_grid(grid, values)
}

/// `c1 q - c2 p + (u - l)`, the derivative of the Hamiltonian in the control, at every node.
pub fn first_order_residuals(
    model: &LinearModelSpec,
    grid: &TimeGrid,
    oracle: &CashAdjointOracle,
    control: &ControlProcess,
) -> Result<Vec<f64>> {
    let u = control.deterministic_values(grid)?;
    Ok(grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &t)| model.c1 * oracle.q[i] - model.c2 * oracle.p[i] + (u[i] - model.l.at(t)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRecord {
    pub label: String,
    pub cost: Estimate,
    /// `J(v) - J(u*)` from path-wise differences on common random numbers.
    pub gap: Estimate,
    /// `E int (v - u*)^2 / 2 dt`.
    pub identity: f64,
    /// `gap - identity`, with the standard error of the gap.
    pub discrepancy: Estimate,
}

impl ComparisonRecord {
    pub fn agrees(&self, k: f64) -> bool {
        self.discrepancy.covers(0.0, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub optimal_cost: Estimate,
    pub comparisons: Vec<ComparisonRecord>,
}

/// Costs of `optimal` and each comparison control on the same ensemble, and the
/// gap against `E int (v - u*)^2 / 2 dt`.
pub fn optimality_gap(
    coeffs: &CoefficientSet,
    ensemble: &Ensemble,
    options: &SolverOptions,
    optimal: &FbsdeSolution,
    comparisons: &[(String, ControlProcess)],
) -> Result<(OptimalityReport, Vec<FbsdeSolution>)> {
    let base = path_costs(coeffs, optimal)?;
    let solved: Vec<(ComparisonRecord, FbsdeSolution)> = comparisons
        .par_iter()
        .map(|(label, v)| {
            let sol = solve_fbsde(coeffs, v, ensemble, options)?;
            let costs = path_costs(coeffs, &sol)?;
            let diff: Vec<f64> = costs.iter().zip(&base).map(|(a, b)| a - b).collect();
            let identity_paths: Vec<f64> = (0..sol.paths())
                .map(|m| {
                    let sq: Vec<f64> = sol.v[m]
                        .iter()
                        .zip(&optimal.v[m])
                        .map(|(a, b)| 0.5 * (a - b).powi(2))
                        .collect();
                    trapezoid(&sol.grid, &sq)
                })
                .collect();
            let identity = identity_paths.iter().sum::<f64>() / identity_paths.len() as f64;
            let gap = sol.estimate(&diff);
            let discrepancy: Vec<f64> = diff.iter().zip(&identity_paths).map(|(d, i)| d - i).collect();
            let record = ComparisonRecord {
                label: label.clone(),
                cost: sol.estimate(&costs),
                gap,
                identity,
                discrepancy: sol.estimate(&discrepancy),
            };
            Ok((record, sol))
        })
        .collect::<Result<_>>()?;
    let (records, solutions) = solved.into_iter().unzip();
    Ok((
        OptimalityReport {
            optimal_cost: optimal.estimate(&base),
            comparisons: records,
        },
        solutions,
    ))
}

/// Everything the cash study produces.
#[derive(Debug, Clone)]
pub struct CashStudy {
    pub coeffs: CoefficientSet,
    pub ensemble: Ensemble,
    pub oracle: CashAdjointOracle,
    pub optimal: ControlProcess,
    pub state_oracle: BvpSolution,
    pub trajectory: FbsdeSolution,
    pub adjoint: AdjointSolution,
    pub report: OptimalityReport,
    pub comparison_solutions: Vec<FbsdeSolution>,
}

pub fn run_cash_study(config: &CashStudyConfig) -> Result<CashStudy> {
    config.validate()?;
    let coeffs = build_cash_model(config)?;
    let ensemble = config.ensemble()?;
    let grid = ensemble.grid();
    let oracle = cash_adjoint_oracle(&config.model, grid)?;
    let optimal = optimal_cash_control(&config.model, grid, &oracle)?;
    let state_oracle = cash_state_oracle(&config.model, config.x0, &optimal, grid)?;
    let trajectory = solve_fbsde(&coeffs, &optimal, &ensemble, &config.solver)?;
    let adjoint = solve_adjoint(&coeffs, &trajectory, &ensemble, &config.solver)?;
    let comparisons: Vec<(String, ControlProcess)> = config
        .comparisons
        .iter()
        .map(|c| (c.label(), c.control(&optimal, &config.model)))
        .collect();
    let (report, comparison_solutions) = optimality_gap(&coeffs, &ensemble, &config.solver, &trajectory, &comparisons)?;
    Ok(CashStudy {
        coeffs,
        ensemble,
        oracle,
        optimal,
        state_oracle,
        trajectory,
        adjoint,
        report,
        comparison_solutions,
    })
}

/// CSV `t,p,q,u_star` of the oracle adjoint and the optimal control.
pub fn write_adjoint_csv<W: Write>(
    out: W,
    grid: &TimeGrid,
    oracle: &CashAdjointOracle,
    optimal: &ControlProcess,
) -> Result<()> {
    let u = optimal.deterministic_values(grid)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p", "q", "u_star"])?;
    for (i, &t) in grid.nodes().iter().enumerate() {
        w.write_record([
            format!("{t}"),
            format!("{:.15e}", oracle.p[i]),
            format!("{:.15e}", oracle.q[i]),
            format!("{:.15e}", u[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `t,mean_x,mean_y` of a solved trajectory.
pub fn write_means_csv<W: Write>(out: W, solution: &FbsdeSolution) -> Result<()> {
    let xs = solution.estimates(Component::X);
    let ys = solution.estimates(Component::Y);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "mean_x", "mean_y"])?;
    for (i, &t) in solution.grid.nodes().iter().enumerate() {
        w.write_record([
            format!("{t}"),
            format!("{:.15e}", xs[i].mean),
            format!("{:.15e}", ys[i].mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Node-wise comparison of ensemble means with deterministic oracle values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleAgreement {
    pub max_abs_deviation: f64,
    /// Largest `|mean - oracle| / se` over the nodes (infinite when a deviation has zero error).
    pub max_standard_errors: f64,
    pub worst_node: usize,
    pub k: f64,
    pub agrees: bool,
}

pub fn oracle_agreement(estimates: &[Estimate], oracle: &[f64], k: f64) -> Result<OracleAgreement> {
    if estimates.len() != oracle.len() || oracle.is_empty() {
        return Err(Error::Domain(format!(
            "{} estimates against {} oracle values",
            estimates.len(),
            oracle.len()
        )));
    }
    let mut out = OracleAgreement {
        max_abs_deviation: 0.0,
        max_standard_errors: 0.0,
        worst_node: 0,
        k,
        agrees: true,
    };
    for (i, (e, &o)) in estimates.iter().zip(oracle).enumerate() {
        let dev = (e.mean - o).abs();
        let ratio = if dev == 0.0 { 0.0 } else { dev / e.se };
        out.max_abs_deviation = out.max_abs_deviation.max(dev);
        if ratio > out.max_standard_errors {
            out.max_standard_errors = ratio;
            out.worst_node = i;
        }
        out.agrees &= e.covers(o, k);
    }
    Ok(out)
}
