use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::control::ControlProcess;
use super::regression::{least_squares, require_rows, Basis};
use super::stats::{batch_ranges, estimate, Estimate};
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, State};
use crate::subordination::{Ensemble, TimeGrid};

/// Batches smaller than this are regressed in-sample instead of cross-fitted.
pub const CROSS_FIT_MIN: usize = 64;

/// Number of consecutive growing Picard changes that counts as divergence.
const GROWTH_LIMIT: usize = 3;

/// Frozen-clock rows a fold needs before the overshoot enters its basis;
/// with fewer, polynomial terms in the overshoot extrapolate badly across folds.
const MIN_FROZEN_ROWS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub picard_max: usize,
    /// Ensemble-RMS change of `(x, y)` between Picard iterates that stops the iteration.
    pub tol: f64,
    /// Total degree of the regression polynomials.
    pub degree: usize,
    /// Independent sub-ensembles solved separately; their spread gives standard errors.
    pub batches: usize,
    /// Fit regression coefficients on the other half of the batch (removes look-ahead bias).
    pub cross_fit: bool,
    /// Subtract the regression estimate of `E_i[y_{i+1}]` before projecting on `dB_L`.
    /// Without it the projection noise feeds back through a `z`-dependent diffusion
    /// and the Picard iteration can blow up.
    pub centered_z: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            picard_max: 50,
            tol: 1e-4,
            degree: 2,
            batches: 1,
            cross_fit: true,
            centered_z: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.picard_max == 0 {
            return Err(Error::param("picard_max", "at least one Picard iteration is required"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", format!("must be positive, got {}", self.tol)));
        }
        if self.degree == 0 || self.degree > 4 {
            return Err(Error::param(
                "degree",
                format!("basis degree must be in 1..=4, got {}", self.degree),
            ));
        }
        if self.batches == 0 {
            return Err(Error::param("batches", "at least one batch is required"));
        }
        Ok(())
    }
}

/// Discretized adapted solution: `x`, `y` and the control on nodes, `z` on cells,
/// all indexed `[path][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbsdeSolution {
    pub grid: Arc<TimeGrid>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Picard iterations used by each batch.
    pub iterations: Vec<usize>,
    /// Successive Picard changes of each batch.
    pub changes: Vec<Vec<f64>>,
    pub batches: Vec<Range<usize>>,
}

/// Which solution component to summarize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    X,
    Y,
    Z,
    V,
}

impl FbsdeSolution {
    pub fn paths(&self) -> usize {
        self.x.len()
    }

    /// The state at `(path, node)`; `z` is taken from the cell starting at the
    /// node (the last cell at the terminal node).
    pub fn state(&self, path: usize, node: usize) -> State {
        let n = self.grid.steps();
        State::new(
            self.grid.t(node),
            self.x[path][node],
            self.y[path][node],
            self.z[path][node.min(n - 1)],
            self.v[path][node],
        )
        .at(path, node)
    }

    fn component(&self, c: Component) -> &Vec<Vec<f64>> {
        match c {
            Component::X => &self.x,
            Component::Y => &self.y,
            Component::Z => &self.z,
            Component::V => &self.v,
        }
    }

    /// Mean and standard error at one node (cell for `z`).
    pub fn node_estimate(&self, c: Component, node: usize) -> Estimate {
        let values: Vec<f64> = self.component(c).iter().map(|p| p[node]).collect();
        self.estimate(&values)
    }

    /// Node-wise estimates over the whole grid.
    pub fn estimates(&self, c: Component) -> Vec<Estimate> {
        let len = self.component(c).first().map_or(0, |p| p.len());
        (0..len).map(|i| self.node_estimate(c, i)).collect()
    }

    /// Mean and standard error of arbitrary per-path values using this solution's batches.
    pub fn estimate(&self, values: &[f64]) -> Estimate {
        estimate(values, &self.batches)
    }

    /// Long-format CSV `path_id,t,x,y,z`; `z` is empty on the last node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "t", "x", "y", "z"])?;
        for m in 0..self.paths() {
            for (i, t) in self.grid.nodes().iter().enumerate() {
                let z = self.z[m].get(i).map_or(String::new(), |z| z.to_string());
                w.write_record([
                    m.to_string(),
                    t.to_string(),
                    self.x[m][i].to_string(),
                    self.y[m][i].to_string(),
                    z,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-path evaluation context shared by the sweeps.
struct Sweep<'a> {
    coeffs: &'a CoefficientSet,
    control: &'a ControlProcess,
    ensemble: &'a Ensemble,
}

impl Sweep<'_> {
    fn control(&self, m: usize, i: usize, x: f64) -> Result<f64> {
        let t = self.ensemble.grid().t(i);
        let r = self.ensemble.paths()[m].r[i];
        self.control.admissible_value(m, i, t, x, r)
    }

    fn state(&self, m: usize, i: usize, x: f64, y: f64, z: f64, v: f64) -> State {
        State::new(self.ensemble.grid().t(i), x, y, z, v).at(m, i)
    }

    /// One forward pass of path `m` against the previous iterate.
    fn forward(&self, m: usize, old_x: &[f64], old_y: &[f64], old_z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.ensemble.grid();
        let path = &self.ensemble.paths()[m];
        let n = grid.steps();
        let c = self.coeffs;
        let mut x = Vec::with_capacity(n + 1);
        let mut v = Vec::with_capacity(n + 1);
        x.push(c.x0.value(m));
        for i in 0..n {
            let vi = self.control(m, i, x[i])?;
            v.push(vi);
            let s = self.state(m, i, x[i], old_y[i], old_z[i], vi);
            let b = c.drift.try_eval(&s)?;
            let sigma = c.diffusion.try_eval(&s)?;
            let delta = CoefficientSet::eval_opt(&c.dl_drift, &s)?;
            let v_next = self.control(m, i + 1, old_x[i + 1])?;
            let s_next = self.state(m, i + 1, old_x[i + 1], old_y[i + 1], old_z[(i + 1).min(n - 1)], v_next);
            let b_next = c.drift.try_eval(&s_next)?;
            let dt = grid.dt(i);
            x.push(x[i] + 0.5 * (b + b_next) * dt + delta * path.dl[i] + sigma * path.dbl[i]);
        }
        v.push(self.control(m, n, x[n])?);
        Ok((x, v))
    }
}

/// Solves the forward-backward system on every path of the ensemble by Picard
/// iteration with regression-based conditional expectations.
///
/// Time integrals use the trapezoidal rule (the right endpoint taken from the
/// previous Picard iterate in the forward sweep and solved locally in the
/// backward sweep); `dL` and `dB_L` integrals use left endpoints. `z_i` is the
/// projection of `(y_{i+1} - E_i[y_{i+1}]) dB_{L,i}` on `basis(state_i) dL_i`,
/// and is 0 on cells where the clock is frozen.
pub fn solve_fbsde(
    coeffs: &CoefficientSet,
    control: &ControlProcess,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<FbsdeSolution> {
    options.validate()?;
    if ensemble.is_empty() {
        return Err(Error::Domain("cannot solve on an empty ensemble".into()));
    }
    let m_total = ensemble.len();
    let n = ensemble.grid().steps();
    let ranges = batch_ranges(m_total, options.batches);
    let sweep = Sweep {
        coeffs,
        control,
        ensemble,
    };
    let mut x = vec![Vec::new(); m_total];
    let mut y = vec![Vec::new(); m_total];
    let mut z = vec![Vec::new(); m_total];
    let mut v = vec![Vec::new(); m_total];
    let mut iterations = Vec::with_capacity(ranges.len());
    let mut changes = Vec::with_capacity(ranges.len());
    for range in &ranges {
        let b = solve_batch(&sweep, range.clone(), options)?;
        for (k, m) in range.clone().enumerate() {
            x[m] = b.x[k].clone();
            y[m] = b.y[k].clone();
            z[m] = b.z[k].clone();
            v[m] = b.v[k].clone();
        }
        iterations.push(b.changes.len());
        changes.push(b.changes);
    }
    debug_assert!(x.iter().all(|p| p.len() == n + 1));
    Ok(FbsdeSolution {
        grid: Arc::clone(ensemble.shared_grid()),
        x,
        y,
        z,
        v,
        iterations,
        changes,
        batches: ranges,
    })
}

struct BatchResult {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    changes: Vec<f64>,
}

fn solve_batch(sweep: &Sweep<'_>, range: Range<usize>, options: &SolverOptions) -> Result<BatchResult> {
    let grid = sweep.ensemble.grid();
    let n = grid.steps();
    let size = range.len();
    let c = sweep.coeffs;
    let mut x: Vec<Vec<f64>> = range.clone().map(|m| vec![c.x0.value(m); n + 1]).collect();
    let mut y = vec![vec![0.0; n + 1]; size];
    let mut z = vec![vec![0.0; n]; size];
    let mut v = vec![vec![0.0; n + 1]; size];
    let mut changes = Vec::new();
    let mut growth = 0;
    loop {
        let forward: Vec<(Vec<f64>, Vec<f64>)> = (0..size)
            .into_par_iter()
            .map(|k| sweep.forward(range.start + k, &x[k], &y[k], &z[k]))
            .collect::<Result<_>>()?;
        let (new_x, new_v): (Vec<_>, Vec<_>) = forward.into_iter().unzip();
        let (new_y, new_z) = backward(sweep, &range, &new_x, &new_v, &y, options)?;
        let sq: f64 = (0..size)
            .into_par_iter()
            .map(|k| {
                (0..=n)
                    .map(|i| (new_x[k][i] - x[k][i]).powi(2) + (new_y[k][i] - y[k][i]).powi(2))
                    .sum::<f64>()
            })
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let change = (sq / (size * (n + 1)) as f64).sqrt();
        x = new_x;
        y = new_y;
        z = new_z;
        v = new_v;
        if let Some(&prev) = changes.last() {
            growth = if change > prev { growth + 1 } else { 0 };
        }
        changes.push(change);
        if !change.is_finite() || growth >= GROWTH_LIMIT {
            return Err(Error::Divergence {
                iterations: changes.len(),
                last_change: change,
            });
        }
        if change < options.tol {
            break;
        }
        if changes.len() >= options.picard_max {
            return Err(Error::NotConverged {
                iterations: changes.len(),
                tol: options.tol,
                last_change: change,
            });
        }
    }
    Ok(BatchResult { x, y, z, v, changes })
}

/// Regression folds: two interleaved halves when cross-fitting, the whole batch otherwise.
fn folds(size: usize, cross_fit: bool) -> Vec<Vec<usize>> {
    if cross_fit && size >= CROSS_FIT_MIN {
        vec![(0..size).step_by(2).collect(), (1..size).step_by(2).collect()]
    } else {
        vec![(0..size).collect()]
    }
}

/// Backward sweep for `(y, z)` given the forward states of the current iterate.
fn backward(
    sweep: &Sweep<'_>,
    range: &Range<usize>,
    x: &[Vec<f64>],
    v: &[Vec<f64>],
    old_y: &[Vec<f64>],
    options: &SolverOptions,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let ensemble = sweep.ensemble;
    let grid = ensemble.grid();
    let n = grid.steps();
    let size = range.len();
    let c = sweep.coeffs;
    let paths = &ensemble.paths()[range.clone()];
    let folds = folds(size, options.cross_fit);

    let mut y = vec![vec![0.0; n + 1]; size];
    let mut z = vec![vec![0.0; n]; size];
    for k in 0..size {
        let m = range.start + k;
        let s = sweep.state(m, n, x[k][n], old_y[k][n], 0.0, v[k][n]);
        y[k][n] = c.terminal.try_eval(&s)?;
    }

    let mut vars: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(size)).collect();
    for i in (0..n).rev() {
        let dt = grid.dt(i);
        for var in vars.iter_mut() {
            var.clear();
        }
        for k in 0..size {
            vars[0].push(x[k][i]);
            vars[1].push(paths[k].r[i]);
            if let Some(f) = &c.feature {
                vars[2].push(f.eval(range.start + k, i));
            }
        }
        let active: Vec<bool> = paths.iter().map(|p| p.r[i] == 0.0).collect();
        let reg = NodeRegression::new(&folds, &vars, &active, options.degree, |_| true);

        // z_i: projection of y_{i+1} dB_i on basis * dL_i, fitted per fold and
        // applied across folds.
        let any_active = paths.iter().any(|p| p.dl[i] > 0.0);
        let mut zi = vec![0.0; size];
        if any_active {
            let mut centered: Vec<f64> = (0..size).map(|k| y[k][i + 1]).collect();
            if options.centered_z {
                let coefs = reg.fit(i, |k| Some((1.0, y[k][i + 1])))?;
                let mut mean = vec![0.0; size];
                reg.apply(&coefs, &mut mean);
                centered.iter_mut().zip(&mean).for_each(|(c, m)| *c -= m);
            }
            let z_reg = NodeRegression::new(&folds, &vars, &active, options.degree, |k| paths[k].dl[i] > 0.0);
            let coefs = z_reg.fit(i, |k| {
                let dl = paths[k].dl[i];
                (dl > 0.0).then(|| (dl, centered[k] * paths[k].dbl[i]))
            })?;
            z_reg.apply(&coefs, &mut zi);
            for (k, p) in paths.iter().enumerate() {
                if p.dl[i] == 0.0 {
                    zi[k] = 0.0;
                }
            }
        }
        let z_next = |k: usize| if i + 1 < n { z[k][i + 1] } else { zi[k] };

        // y_i = E_i[y_{i+1} + f_{i+1} dt / 2 + h_dl dL_i] + f_i dt / 2.
        let targets: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|k| {
                let m = range.start + k;
                let s_next = sweep.state(m, i + 1, x[k][i + 1], y[k][i + 1], z_next(k), v[k][i + 1]);
                let f_next = c.driver.try_eval(&s_next)?;
                let s = sweep.state(m, i, x[k][i], old_y[k][i], zi[k], v[k][i]);
                let h = CoefficientSet::eval_opt(&c.dl_driver, &s)?;
                Ok(y[k][i + 1] + 0.5 * f_next * dt + h * paths[k].dl[i])
            })
            .collect::<Result<_>>()?;
        let coefs = reg.fit(i, |k| Some((1.0, targets[k])))?;
        let mut fitted = vec![0.0; size];
        reg.apply(&coefs, &mut fitted);
        let yi: Vec<f64> = (0..size)
            .into_par_iter()
            .map(|k| {
                let m = range.start + k;
                let mut yk = old_y[k][i];
                for _ in 0..50 {
                    let s = sweep.state(m, i, x[k][i], yk, zi[k], v[k][i]);
                    let next = fitted[k] + 0.5 * c.driver.try_eval(&s)? * dt;
                    let done = (next - yk).abs() <= 1e-15 * next.abs().max(1.0);
                    yk = next;
                    if done {
                        break;
                    }
                }
                Ok(yk)
            })
            .collect::<Result<_>>()?;
        for k in 0..size {
            y[k][i] = yi[k];
            z[k][i] = zi[k];
        }
    }
    Ok((y, z))
}

/// Regression folds of one node, each with a basis standardized on its own rows
/// so that variables constant within a fold never get extrapolated coefficients.
struct NodeRegression<'a> {
    folds: &'a [Vec<usize>],
    fit_rows: Vec<Vec<usize>>,
    bases: Vec<Basis>,
    vars: &'a [Vec<f64>],
    active: &'a [bool],
}

impl<'a> NodeRegression<'a> {
    /// `fits_row` selects the rows the basis is standardized on and later fitted to.
    fn new(
        folds: &'a [Vec<usize>],
        vars: &'a [Vec<f64>],
        active: &'a [bool],
        degree: usize,
        fits_row: impl Fn(usize) -> bool,
    ) -> Self {
        let fit_rows: Vec<Vec<usize>> = folds
            .iter()
            .map(|rows| rows.iter().copied().filter(|&k| fits_row(k)).collect())
            .collect();
        let bases = fit_rows
            .iter()
            .map(|rows| {
                let act: Vec<bool> = rows.iter().map(|&k| active[k]).collect();
                let frozen = act.iter().filter(|&&a| !a).count();
                let sub: Vec<Vec<f64>> = vars
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        if v.is_empty() || (j == 1 && frozen < MIN_FROZEN_ROWS) {
                            Vec::new()
                        } else {
                            rows.iter().map(|&k| v[k]).collect()
                        }
                    })
                    .collect();
                Basis::fit(&sub, Some(&act), degree)
            })
            .collect();
        Self {
            folds,
            fit_rows,
            bases,
            vars,
            active,
        }
    }

    fn features(&self, basis: &Basis, k: usize, buf: &mut [f64]) {
        let extra = self.vars[2].get(k).copied().unwrap_or(0.0);
        basis.eval(&[self.vars[0][k], self.vars[1][k], extra], self.active[k], buf);
    }

    /// One coefficient vector per fold for rows `k -> Some((weight, target))`,
    /// the regressors being `weight * basis(state_k)`.
    fn fit<F>(&self, node: usize, row: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(usize) -> Option<(f64, f64)> + Sync,
    {
        self.fit_rows
            .iter()
            .zip(&self.bases)
            .map(|(rows, basis)| {
                let cols = basis.columns();
                let (coef, used) = least_squares(rows, cols, |k, buf| {
                    let (w, target) = row(k)?;
                    self.features(basis, k, buf);
                    buf.iter_mut().for_each(|b| *b *= w);
                    Some(target)
                });
                require_rows(node, used, cols)?;
                Ok(coef)
            })
            .collect()
    }

    /// With two folds, each half is evaluated with the other half's fit.
    fn apply(&self, coefs: &[Vec<f64>], out: &mut [f64]) {
        for (f, rows) in self.folds.iter().enumerate() {
            let g = (f + 1) % self.folds.len();
            let mut buf = vec![0.0; self.bases[g].columns()];
            for &k in rows {
                self.features(&self.bases[g], k, &mut buf);
                out[k] = buf.iter().zip(&coefs[g]).map(|(a, b)| a * b).sum();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coefficient;
    use crate::subordination::LevySpec;

    fn trivial() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::zero("b"),
            Coefficient::zero("sigma"),
            Coefficient::zero("f"),
            Coefficient::affine("phi", 0.0, 1.0, 0.0, 0.0, 0.0),
            1.0,
        )
    }

    #[test]
    fn trivial_model_is_constant() {
        let spec = LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 20).unwrap(), 0.0, 200, 3, 10).unwrap();
        let sol = solve_fbsde(
            &trivial(),
            &ControlProcess::constant(0.0),
            &e,
            &SolverOptions::default(),
        )
        .unwrap();
        for m in 0..e.len() {
            assert!(sol.x[m].iter().all(|&v| v == 1.0));
            assert!(sol.y[m].iter().all(|&v| (v - 1.0).abs() < 1e-10));
            assert!(sol.z[m].iter().all(|&v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn degenerate_basis_is_reported() {
        let spec = LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 10).unwrap(), 0.0, 4, 3, 10).unwrap();
        let mut c = trivial();
        c.diffusion = Coefficient::affine("sigma", 1.0, 0.0, 0.0, 0.0, 0.0);
        c.driver = Coefficient::affine("f", 0.0, 1.0, 0.0, 0.0, 0.0);
        let opts = SolverOptions {
            degree: 4,
            ..SolverOptions::default()
        };
        let err = solve_fbsde(&c, &ControlProcess::constant(0.0), &e, &opts).unwrap_err();
        assert!(matches!(err, Error::BasisDegeneracy { .. }), "{err:?}");
    }

    #[test]
    fn picard_budget_is_enforced() {
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 10).unwrap(), 0.0, 100, 3, 10).unwrap();
        let mut c = trivial();
        c.drift = Coefficient::affine("b", 0.0, 0.0, -1.0, 0.0, 0.0);
        c.driver = Coefficient::affine("f", 0.0, 1.0, 0.0, 0.0, 0.0);
        let opts = SolverOptions {
            picard_max: 1,
            ..SolverOptions::default()
        };
        let err = solve_fbsde(&c, &ControlProcess::constant(0.0), &e, &opts).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 1, .. }));
    }

    #[test]
    fn strongly_coupled_long_horizon_diverges() {
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(8.0, 40).unwrap(), 0.0, 100, 3, 10).unwrap();
        let mut c = trivial();
        c.drift = Coefficient::affine("b", 0.0, 0.0, 3.0, 0.0, 0.0);
        c.terminal = Coefficient::affine("phi", 0.0, 3.0, 0.0, 0.0, 0.0);
        let err = solve_fbsde(&c, &ControlProcess::constant(0.0), &e, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }
}
