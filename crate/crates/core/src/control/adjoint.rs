use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Coefficient, CoefficientSet, Feature, Gradient, InitialValue, State};
use crate::solver::{solve_fbsde, ControlProcess, FbsdeSolution, SolverOptions};
use crate::subordination::{Ensemble, TimeGrid};

/// Partial derivatives of the model along a solved trajectory, `[path][node]`.
#[derive(Debug, Clone)]
pub struct FrozenGradients {
    pub drift: Vec<Vec<Gradient>>,
    pub diffusion: Vec<Vec<Gradient>>,
    pub driver: Vec<Vec<Gradient>>,
    pub running_cost: Vec<Vec<Gradient>>,
    /// `phi_x(x_N)` and `h_T,x(x_N)` per path.
    pub terminal_slope: Vec<f64>,
    pub terminal_cost_slope: Vec<f64>,
    /// `gamma_y(y_0)` per path.
    pub initial_cost_slope: Vec<f64>,
}

/// The state of `trajectory` at `(path, node)`.
pub fn trajectory_state(trajectory: &FbsdeSolution, path: usize, node: usize) -> State {
    trajectory.state(path, node)
}

impl FrozenGradients {
    pub fn along(coeffs: &CoefficientSet, trajectory: &FbsdeSolution) -> Result<Self> {
        if coeffs.dl_drift.is_some() || coeffs.dl_driver.is_some() {
            return Err(Error::Domain(
                "adjoint and variational systems are defined for models without dL terms".into(),
            ));
        }
        let n = trajectory.grid.steps();
        let table = |c: Option<&Coefficient>| -> Result<Vec<Vec<Gradient>>> {
            (0..trajectory.paths())
                .into_par_iter()
                .map(|m| {
                    (0..=n)
                        .map(|i| match c {
                            Some(c) => c.try_gradient(&trajectory_state(trajectory, m, i)),
                            None => Ok(Gradient::default()),
                        })
                        .collect()
                })
                .collect()
        };
        let terminal = |c: Option<&Coefficient>| -> Result<Vec<f64>> {
            (0..trajectory.paths())
                .map(|m| match c {
                    Some(c) => Ok(c.try_gradient(&trajectory_state(trajectory, m, n))?.x),
                    None => Ok(0.0),
                })
                .collect()
        };
        let initial_cost_slope = (0..trajectory.paths())
            .map(|m| match &coeffs.initial_cost {
                Some(c) => Ok(c.try_gradient(&trajectory_state(trajectory, m, 0))?.y),
                None => Ok(0.0),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            drift: table(Some(&coeffs.drift))?,
            diffusion: table(Some(&coeffs.diffusion))?,
            driver: table(Some(&coeffs.driver))?,
            running_cost: table(coeffs.running_cost.as_ref())?,
            terminal_slope: terminal(Some(&coeffs.terminal))?,
            terminal_cost_slope: terminal(coeffs.terminal_cost.as_ref())?,
            initial_cost_slope,
        })
    }
}

/// Scaling of the adjoint boundary data and cost gradients.
///
/// The unconstrained adjoint uses `AdjointWeights::default()`: cost weight 1 and
/// no constraint terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointWeights {
    /// Multiplies `g_x`, `g_y`, `h_T,x` and `gamma_y`.
    pub cost: f64,
    /// `q(T)` gains `terminal_constraint * G1_x(x(T))`.
    pub terminal_constraint: f64,
    /// `p(0)` gains `-initial_constraint * G0_y(y(0))`.
    pub initial_constraint: f64,
}

impl Default for AdjointWeights {
    fn default() -> Self {
        Self {
            cost: 1.0,
            terminal_constraint: 0.0,
            initial_constraint: 0.0,
        }
    }
}

/// Extra boundary slopes of the constrained adjoint, per path.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSlopes {
    /// `G1_x(x(T))` per path.
    pub terminal: Vec<f64>,
    /// `G0_y(y(0))` per path.
    pub initial: Vec<f64>,
}

/// Adjoint system as a forward-backward system in `(p, q, k)`:
///
/// ```text
/// dp  = [f_y p - b_y q - g_y] dt - sigma_y k dL - sigma_z k dB_L,   p(0) = -gamma_y(y(0))
/// -dq = [-f_x p + b_x q + g_x] dt + sigma_x k dL - k dB_L,          q(T) = -phi_x(x(T)) p(T) + h_T,x(x(T))
/// ```
///
/// with every derivative frozen along `trajectory`. The base `x` is offered to
/// the regression basis as an extra feature.
pub fn build_adjoint(coeffs: &CoefficientSet, trajectory: &FbsdeSolution) -> Result<CoefficientSet> {
    build_weighted_adjoint(
        coeffs,
        trajectory,
        AdjointWeights::default(),
        &ConstraintSlopes::default(),
    )
}

pub fn build_weighted_adjoint(
    coeffs: &CoefficientSet,
    trajectory: &FbsdeSolution,
    weights: AdjointWeights,
    constraints: &ConstraintSlopes,
) -> Result<CoefficientSet> {
    let g = Arc::new(FrozenGradients::along(coeffs, trajectory)?);
    let w = weights;
    let paths = trajectory.paths();
    let slope = |v: &[f64], m: usize| v.get(m).copied().unwrap_or(0.0);

    let gd = Arc::clone(&g);
    let drift = Coefficient::new("adjoint drift", move |s| {
        let (b, f, c) = (
            gd.drift[s.path][s.node],
            gd.driver[s.path][s.node],
            gd.running_cost[s.path][s.node],
        );
        f.y * s.x - b.y * s.y - w.cost * c.y
    });
    let gd = Arc::clone(&g);
    let drift = drift.with_gradient(move |s| {
        let (b, f) = (gd.drift[s.path][s.node], gd.driver[s.path][s.node]);
        Gradient::new(f.y, -b.y, 0.0, 0.0)
    });

    let gd = Arc::clone(&g);
    let diffusion = Coefficient::new("adjoint diffusion", move |s| -gd.diffusion[s.path][s.node].z * s.z);
    let gd = Arc::clone(&g);
    let diffusion = diffusion.with_gradient(move |s| Gradient::new(0.0, 0.0, -gd.diffusion[s.path][s.node].z, 0.0));

    let gd = Arc::clone(&g);
    let dl_drift = Coefficient::new("adjoint dL drift", move |s| -gd.diffusion[s.path][s.node].y * s.z);
    let gd = Arc::clone(&g);
    let dl_drift = dl_drift.with_gradient(move |s| Gradient::new(0.0, 0.0, -gd.diffusion[s.path][s.node].y, 0.0));

    let gd = Arc::clone(&g);
    let driver = Coefficient::new("adjoint driver", move |s| {
        let (b, f, c) = (
            gd.drift[s.path][s.node],
            gd.driver[s.path][s.node],
            gd.running_cost[s.path][s.node],
        );
        -f.x * s.x + b.x * s.y + w.cost * c.x
    });
    let gd = Arc::clone(&g);
    let driver = driver.with_gradient(move |s| {
        let (b, f) = (gd.drift[s.path][s.node], gd.driver[s.path][s.node]);
        Gradient::new(-f.x, b.x, 0.0, 0.0)
    });

    let gd = Arc::clone(&g);
    let dl_driver = Coefficient::new("adjoint dL driver", move |s| gd.diffusion[s.path][s.node].x * s.z);
    let gd = Arc::clone(&g);
    let dl_driver = dl_driver.with_gradient(move |s| Gradient::new(0.0, 0.0, gd.diffusion[s.path][s.node].x, 0.0));

    let g1: Arc<Vec<f64>> = Arc::new((0..paths).map(|m| slope(&constraints.terminal, m)).collect());
    let gd = Arc::clone(&g);
    let g1c = Arc::clone(&g1);
    let terminal = Coefficient::new("adjoint terminal", move |s| {
        w.terminal_constraint * g1c[s.path] - gd.terminal_slope[s.path] * s.x + w.cost * gd.terminal_cost_slope[s.path]
    });
    let gd = Arc::clone(&g);
    let terminal = terminal.with_gradient(move |s| Gradient::new(-gd.terminal_slope[s.path], 0.0, 0.0, 0.0));

    let p0: Vec<f64> = (0..paths)
        .map(|m| -w.initial_constraint * slope(&constraints.initial, m) - w.cost * g.initial_cost_slope[m])
        .collect();

    let base_x: Arc<Vec<Vec<f64>>> = Arc::new(trajectory.x.clone());
    let mut out = CoefficientSet::new(drift, diffusion, driver, terminal, 0.0)
        .with_dl_terms(Some(dl_drift), Some(dl_driver))
        .with_feature(Feature::new(move |m, i| base_x[m][i]));
    out.x0 = InitialValue::PerPath(Arc::new(p0));
    Ok(out)
}

/// Adjoint processes on the grid: `p`, `q` on nodes and `k` on cells, `[path][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub grid: Arc<TimeGrid>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    /// Monte Carlo solution this was read from, absent for broadcast oracle values.
    pub solution: Option<FbsdeSolution>,
}

impl AdjointSolution {
    pub fn from_solution(solution: FbsdeSolution) -> Self {
        Self {
            grid: Arc::clone(&solution.grid),
            p: solution.x.clone(),
            q: solution.y.clone(),
            k: solution.z.clone(),
            solution: Some(solution),
        }
    }

    /// The same deterministic `(p, q)` on every path, `k = 0`.
    pub fn broadcast(grid: Arc<TimeGrid>, p: &[f64], q: &[f64], paths: usize) -> Result<Self> {
        let nodes = grid.nodes().len();
        if p.len() != nodes || q.len() != nodes {
            return Err(Error::Domain(format!(
                "adjoint values have {} and {} nodes, the grid has {nodes}",
                p.len(),
                q.len()
            )));
        }
        Ok(Self {
            p: vec![p.to_vec(); paths],
            q: vec![q.to_vec(); paths],
            k: vec![vec![0.0; nodes - 1]; paths],
            grid,
            solution: None,
        })
    }

    pub fn paths(&self) -> usize {
        self.p.len()
    }
}

/// Builds and solves the adjoint system along `trajectory` on the same ensemble.
pub fn solve_adjoint(
    coeffs: &CoefficientSet,
    trajectory: &FbsdeSolution,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<AdjointSolution> {
    let adjoint = build_adjoint(coeffs, trajectory)?;
    let sol = solve_fbsde(&adjoint, &ControlProcess::constant(0.0), ensemble, options)?;
    Ok(AdjointSolution::from_solution(sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModelSpec;
    use crate::subordination::LevySpec;

    fn cash_run(paths: usize) -> (CoefficientSet, FbsdeSolution, Ensemble) {
        let c = LinearModelSpec::default().coefficients(1.0).unwrap();
        let spec = LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 20).unwrap(), 0.0, paths, 11, 10).unwrap();
        let sol = solve_fbsde(&c, &ControlProcess::constant(0.5), &e, &SolverOptions::default()).unwrap();
        (c, sol, e)
    }

    #[test]
    fn cash_adjoint_coefficients() {
        let s = LinearModelSpec::default();
        let (c, sol, _) = cash_run(50);
        let adj = build_adjoint(&c, &sol).unwrap();
        let st = State::new(0.3, 0.7, -0.2, 0.4, 0.0).at(3, 5);
        // dp = (-m1 p + n1 q) dt + n2 k dB_L, -dq = (-m2 p - m1 q) dt - k dB_L.
        assert!((adj.drift.eval(&st) - (-s.m1 * 0.7 + s.n1 * -0.2)).abs() < 1e-14);
        assert!((adj.diffusion.eval(&st) - s.n2 * 0.4).abs() < 1e-14);
        assert!((adj.driver.eval(&st) - (-s.m2 * 0.7 - s.m1 * -0.2)).abs() < 1e-14);
        assert_eq!(adj.dl_drift.as_ref().unwrap().eval(&st), 0.0);
        assert_eq!(adj.dl_driver.as_ref().unwrap().eval(&st), 0.0);
        assert!((adj.terminal.eval(&st) + s.a_slope * 0.7).abs() < 1e-14);
        assert_eq!(adj.x0.value(7), 1.0);
    }

    #[test]
    fn homogeneous_adjoint_vanishes() {
        let (mut c, sol, e) = cash_run(100);
        c.terminal = Coefficient::zero("phi");
        c.running_cost = Some(Coefficient::zero("g"));
        c.initial_cost = Some(Coefficient::zero("gamma"));
        let a = solve_adjoint(&c, &sol, &e, &SolverOptions::default()).unwrap();
        for m in 0..a.paths() {
            assert!(a.p[m].iter().chain(&a.q[m]).chain(&a.k[m]).all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn missing_gradient_is_reported() {
        let (mut c, sol, _) = cash_run(20);
        c.drift = Coefficient::new("b", |s| if s.x > 0.5 { f64::NAN } else { s.x }).without_gradient();
        assert!(matches!(build_adjoint(&c, &sol), Err(Error::Coefficient { .. })));
    }
}
