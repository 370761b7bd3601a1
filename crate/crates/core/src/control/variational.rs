use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::adjoint::{trajectory_state, AdjointSolution, FrozenGradients};
use crate::error::{Error, Result};
use crate::model::{Coefficient, CoefficientSet, Feature, Gradient, State};
use crate::solver::{solve_fbsde, trapezoid, ControlProcess, Estimate, FbsdeSolution, SolverOptions};
use crate::subordination::Ensemble;

/// `u` replaced by `v` on `[start, start + width)`.
pub fn spike_perturb(
    u: &ControlProcess,
    v: &ControlProcess,
    start: f64,
    width: f64,
    horizon: f64,
) -> Result<ControlProcess> {
    u.spike(v, start, width, horizon)
}

/// Control-induced differences `c(u^eps) - c(u)` along the base trajectory, `[path][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub drift: Vec<Vec<f64>>,
    pub driver: Vec<Vec<f64>>,
    pub running_cost: Vec<Vec<f64>>,
}

impl Forcing {
    pub fn along(
        coeffs: &CoefficientSet,
        base: &FbsdeSolution,
        perturbed: &ControlProcess,
        ensemble: &Ensemble,
    ) -> Result<Self> {
        let n = base.grid.steps();
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..base.paths())
            .into_par_iter()
            .map(|m| {
                let mut db = Vec::with_capacity(n + 1);
                let mut df = Vec::with_capacity(n + 1);
                let mut dg = Vec::with_capacity(n + 1);
                for i in 0..=n {
                    let s = trajectory_state(base, m, i);
                    let r = ensemble.paths()[m].r[i];
                    let v = perturbed.admissible_value(m, i, s.t, s.x, r)?;
                    let sv = State { v, ..s };
                    db.push(coeffs.drift.try_eval(&sv)? - coeffs.drift.try_eval(&s)?);
                    df.push(coeffs.driver.try_eval(&sv)? - coeffs.driver.try_eval(&s)?);
                    dg.push(
                        CoefficientSet::eval_opt(&coeffs.running_cost, &sv)?
                            - CoefficientSet::eval_opt(&coeffs.running_cost, &s)?,
                    );
                }
                Ok((db, df, dg))
            })
            .collect::<Result<_>>()?;
        let mut out = Forcing {
            drift: Vec::with_capacity(rows.len()),
            driver: Vec::with_capacity(rows.len()),
            running_cost: Vec::with_capacity(rows.len()),
        };
        for (db, df, dg) in rows {
            out.drift.push(db);
            out.driver.push(df);
            out.running_cost.push(dg);
        }
        Ok(out)
    }

    pub fn is_zero(&self) -> bool {
        self.drift.iter().chain(&self.driver).flatten().all(|&v| v == 0.0)
    }
}

/// First-order response `(x1, y1, z1)` to a spike variation with its forcing data.
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub solution: FbsdeSolution,
    pub forcing: Forcing,
    pub gradients: Arc<FrozenGradients>,
}

impl VariationalSolution {
    pub fn x1(&self) -> &[Vec<f64>] {
        &self.solution.x
    }

    pub fn y1(&self) -> &[Vec<f64>] {
        &self.solution.y
    }

    pub fn z1(&self) -> &[Vec<f64>] {
        &self.solution.z
    }
}

/// Linearization of the system along `base` driven by the control forcing:
///
/// ```text
/// dx1  = [b_x x1 + b_y y1 + b(u^eps) - b(u)] dt + [sigma_x x1 + sigma_y y1 + sigma_z z1] dB_L,  x1(0) = 0
/// -dy1 = [f_x x1 + f_y y1 + f(u^eps) - f(u)] dt - z1 dB_L,                                    y1(T) = phi_x(x(T)) x1(T)
/// ```
///
/// The control differences are evaluated at the base state, so the forcing is
/// supported on the perturbation window.
pub fn variational_system(gradients: Arc<FrozenGradients>, forcing: &Forcing, base: &FbsdeSolution) -> CoefficientSet {
    let g = gradients;
    let db = Arc::new(forcing.drift.clone());
    let df = Arc::new(forcing.driver.clone());

    let (gd, f) = (Arc::clone(&g), Arc::clone(&db));
    let drift = Coefficient::new("variational drift", move |s| {
        let b = gd.drift[s.path][s.node];
        b.x * s.x + b.y * s.y + f[s.path][s.node]
    });
    let gd = Arc::clone(&g);
    let drift = drift.with_gradient(move |s| {
        let b = gd.drift[s.path][s.node];
        Gradient::new(b.x, b.y, 0.0, 0.0)
    });

    let gd = Arc::clone(&g);
    let diffusion = Coefficient::new("variational diffusion", move |s| {
        let d = gd.diffusion[s.path][s.node];
        d.x * s.x + d.y * s.y + d.z * s.z
    });
    let gd = Arc::clone(&g);
    let diffusion = diffusion.with_gradient(move |s| {
        let d = gd.diffusion[s.path][s.node];
        Gradient::new(d.x, d.y, d.z, 0.0)
    });

    let (gd, f) = (Arc::clone(&g), Arc::clone(&df));
    let driver = Coefficient::new("variational driver", move |s| {
        let d = gd.driver[s.path][s.node];
        d.x * s.x + d.y * s.y + f[s.path][s.node]
    });
    let gd = Arc::clone(&g);
    let driver = driver.with_gradient(move |s| {
        let d = gd.driver[s.path][s.node];
        Gradient::new(d.x, d.y, 0.0, 0.0)
    });

    let gd = Arc::clone(&g);
    let terminal = Coefficient::new("variational terminal", move |s| gd.terminal_slope[s.path] * s.x);
    let gd = Arc::clone(&g);
    let terminal = terminal.with_gradient(move |s| Gradient::new(gd.terminal_slope[s.path], 0.0, 0.0, 0.0));

    let base_x: Arc<Vec<Vec<f64>>> = Arc::new(base.x.clone());
    CoefficientSet::new(drift, diffusion, driver, terminal, 0.0).with_feature(Feature::new(move |m, i| base_x[m][i]))
}

pub fn solve_variational_equation(
    coeffs: &CoefficientSet,
    base: &FbsdeSolution,
    perturbed: &ControlProcess,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<VariationalSolution> {
    let gradients = Arc::new(FrozenGradients::along(coeffs, base)?);
    solve_variational_with(coeffs, base, Arc::clone(&gradients), perturbed, ensemble, options)
}

/// As [`solve_variational_equation`] with gradients already frozen along `base`.
pub fn solve_variational_with(
    coeffs: &CoefficientSet,
    base: &FbsdeSolution,
    gradients: Arc<FrozenGradients>,
    perturbed: &ControlProcess,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<VariationalSolution> {
    let forcing = Forcing::along(coeffs, base, perturbed, ensemble)?;
    let system = variational_system(Arc::clone(&gradients), &forcing, base);
    let solution = if forcing.is_zero() {
        zero_solution(base)
    } else {
        solve_fbsde(&system, &ControlProcess::constant(0.0), ensemble, options)?
    };
    Ok(VariationalSolution {
        solution,
        forcing,
        gradients,
    })
}

/// A homogeneous linear system with zero boundary data has the zero solution.
fn zero_solution(base: &FbsdeSolution) -> FbsdeSolution {
    let zeros = |v: &Vec<Vec<f64>>| v.iter().map(|p| vec![0.0; p.len()]).collect();
    FbsdeSolution {
        grid: Arc::clone(&base.grid),
        x: zeros(&base.x),
        y: zeros(&base.y),
        z: zeros(&base.z),
        v: zeros(&base.v),
        iterations: vec![0; base.batches.len()],
        changes: vec![Vec::new(); base.batches.len()],
        batches: base.batches.clone(),
    }
}

/// `E int [g_x x1 + g_y y1 + g(u^eps) - g(u)] dt + E[h_T,x(x(T)) x1(T)] + E[gamma_y(y(0)) y1(0)]`.
pub fn variational_inequality_lhs(var: &VariationalSolution, base: &FbsdeSolution) -> Estimate {
    let g = &var.gradients;
    let n = base.grid.steps();
    let values: Vec<f64> = (0..base.paths())
        .map(|m| {
            let integrand: Vec<f64> = (0..=n)
                .map(|i| {
                    let c = g.running_cost[m][i];
                    c.x * var.x1()[m][i] + c.y * var.y1()[m][i] + var.forcing.running_cost[m][i]
                })
                .collect();
            trapezoid(&base.grid, &integrand)
                + g.terminal_cost_slope[m] * var.x1()[m][n]
                + g.initial_cost_slope[m] * var.y1()[m][0]
        })
        .collect();
    base.estimate(&values)
}

/// Both sides of the adjoint pairing
///
/// ```text
/// E[h_T,x(x(T)) x1(T) + gamma_y(y(0)) y1(0)] = E int [q (b(u^eps) - b(u)) - p (f(u^eps) - f(u)) - g_x x1 - g_y y1] dt
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityCheck {
    pub boundary: Estimate,
    pub integral: Estimate,
    /// Path-wise difference of the two sides.
    pub difference: Estimate,
}

impl DualityCheck {
    /// Whether the difference is within `k` standard errors of zero.
    pub fn agrees(&self, k: f64) -> bool {
        self.difference.covers(0.0, k)
    }
}

pub fn duality_check(
    var: &VariationalSolution,
    base: &FbsdeSolution,
    adjoint: &AdjointSolution,
) -> Result<DualityCheck> {
    if adjoint.paths() != base.paths() || *adjoint.grid != *base.grid {
        return Err(Error::Domain("adjoint is not aligned with the base trajectory".into()));
    }
    let g = &var.gradients;
    let n = base.grid.steps();
    let mut boundary = Vec::with_capacity(base.paths());
    let mut integral = Vec::with_capacity(base.paths());
    for m in 0..base.paths() {
        boundary.push(g.terminal_cost_slope[m] * var.x1()[m][n] + g.initial_cost_slope[m] * var.y1()[m][0]);
        let integrand: Vec<f64> = (0..=n)
            .map(|i| {
                let c = g.running_cost[m][i];
                adjoint.q[m][i] * var.forcing.drift[m][i]
                    - adjoint.p[m][i] * var.forcing.driver[m][i]
                    - c.x * var.x1()[m][i]
                    - c.y * var.y1()[m][i]
            })
            .collect();
        integral.push(trapezoid(&base.grid, &integrand));
    }
    let difference: Vec<f64> = boundary.iter().zip(&integral).map(|(a, b)| a - b).collect();
    Ok(DualityCheck {
        boundary: base.estimate(&boundary),
        integral: base.estimate(&integral),
        difference: base.estimate(&difference),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModelSpec;
    use crate::subordination::{LevySpec, TimeGrid};

    fn setup() -> (CoefficientSet, ControlProcess, FbsdeSolution, Ensemble) {
        let c = LinearModelSpec::default().coefficients(1.0).unwrap();
        let spec = LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 20).unwrap(), 0.0, 100, 5, 10).unwrap();
        let u = ControlProcess::constant(0.5);
        let base = solve_fbsde(&c, &u, &e, &SolverOptions::default()).unwrap();
        (c, u, base, e)
    }

    #[test]
    fn spike_definition() {
        let u = ControlProcess::constant(0.0);
        let v = ControlProcess::constant(1.0);
        let ue = spike_perturb(&u, &v, 0.4, 0.1, 1.0).unwrap();
        assert_eq!(ue.value(0, 0, 0.45, 0.0, 0.0), 1.0);
        assert_eq!(ue.value(0, 0, 0.55, 0.0, 0.0), 0.0);
        let same = spike_perturb(&u, &u, 0.4, 0.1, 1.0).unwrap();
        assert_eq!(same.value(0, 0, 0.45, 0.0, 0.0), 0.0);
        let empty = spike_perturb(&u, &v, 0.4, 0.0, 1.0).unwrap();
        assert_eq!(empty.value(0, 0, 0.4, 0.0, 0.0), 0.0);
        assert!(spike_perturb(&u, &v, 0.95, 0.1, 1.0).is_err());
    }

    #[test]
    fn empty_window_gives_zero_response() {
        let (c, u, base, e) = setup();
        let ue = spike_perturb(&u, &u.offset(1.0), 0.4, 0.0, 1.0).unwrap();
        let var = solve_variational_equation(&c, &base, &ue, &e, &SolverOptions::default()).unwrap();
        assert!(var.x1().iter().chain(var.y1()).flatten().all(|&v| v == 0.0));
        assert_eq!(variational_inequality_lhs(&var, &base).mean, 0.0);
    }

    #[test]
    fn decoupled_driver_forcing_integrates_backward() {
        // b, sigma, phi have no state dependence: x1 = 0 and y1(t) = int_t^T forcing.
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 20).unwrap(), 0.0, 50, 5, 10).unwrap();
        let c = CoefficientSet::new(
            Coefficient::zero("b"),
            Coefficient::zero("sigma"),
            Coefficient::affine("f", 0.0, 0.0, 0.0, 0.0, 2.0),
            Coefficient::zero("phi"),
            1.0,
        );
        let u = ControlProcess::constant(0.0);
        let base = solve_fbsde(&c, &u, &e, &SolverOptions::default()).unwrap();
        let ue = spike_perturb(&u, &ControlProcess::constant(1.0), 0.4, 0.2, 1.0).unwrap();
        let var = solve_variational_equation(&c, &base, &ue, &e, &SolverOptions::default()).unwrap();
        let grid = e.grid();
        for m in 0..e.len() {
            assert!(var.x1()[m].iter().all(|&v| v.abs() < 1e-12));
            for i in 0..=grid.steps() {
                let expect: f64 = (i..grid.steps())
                    .map(|j| 0.5 * (var.forcing.driver[m][j] + var.forcing.driver[m][j + 1]) * grid.dt(j))
                    .sum();
                assert!((var.y1()[m][i] - expect).abs() < 1e-10);
            }
        }
    }
}
