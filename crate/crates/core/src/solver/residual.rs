use rayon::prelude::*;
use serde::Serialize;

use super::fbsde::FbsdeSolution;
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, State};
use crate::subordination::Ensemble;

/// Residuals of the discrete integral identities
///
/// ```text
/// x_i = x0 + sum_{j<i} [ (b_j + b_{j+1}) dt_j / 2 + delta_j dL_j + sigma_j dB_j ]
/// y_i = phi(x_N) + sum_{j>=i} [ (f_j + f_{j+1}) dt_j / 2 + h_j dL_j - z_j dB_j ]
/// ```
///
/// The pathwise backward residual also contains the part of `y_{i+1}` that the
/// regression cannot represent as a stochastic integral; its ensemble mean
/// (`backward_mean`) isolates the equation error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `[path][node]`.
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    pub forward_max: f64,
    pub forward_rms: f64,
    pub backward_max: f64,
    pub backward_rms: f64,
    /// Largest absolute node-wise ensemble mean of the backward residual.
    pub backward_mean_max: f64,
    /// `max_m |y_N - phi(x_N)|`.
    pub terminal_max: f64,
}

pub fn residual_check(
    solution: &FbsdeSolution,
    coeffs: &CoefficientSet,
    ensemble: &Ensemble,
) -> Result<ResidualReport> {
    let grid = ensemble.grid();
    if *solution.grid != *grid || solution.paths() != ensemble.len() {
        return Err(Error::Domain("solution is not aligned with the ensemble".into()));
    }
    let n = grid.steps();
    let c = coeffs;
    let per_path: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..ensemble.len())
        .into_par_iter()
        .map(|m| {
            let p = &ensemble.paths()[m];
            let (x, y, z, v) = (&solution.x[m], &solution.y[m], &solution.z[m], &solution.v[m]);
            let state = |i: usize| State::new(grid.t(i), x[i], y[i], z[i.min(n - 1)], v[i]).at(m, i);
            let b: Vec<f64> = (0..=n).map(|i| c.drift.try_eval(&state(i))).collect::<Result<_>>()?;
            let f: Vec<f64> = (0..=n).map(|i| c.driver.try_eval(&state(i))).collect::<Result<_>>()?;
            let phi = c.terminal.try_eval(&state(n))?;
            let mut fwd = vec![0.0; n + 1];
            let mut acc = c.x0.value(m);
            fwd[0] = x[0] - acc;
            for i in 0..n {
                let s = state(i);
                let sigma = c.diffusion.try_eval(&s)?;
                let delta = CoefficientSet::eval_opt(&c.dl_drift, &s)?;
                acc += 0.5 * (b[i] + b[i + 1]) * grid.dt(i) + delta * p.dl[i] + sigma * p.dbl[i];
                fwd[i + 1] = x[i + 1] - acc;
            }
            let mut bwd = vec![0.0; n + 1];
            let mut acc = phi;
            bwd[n] = y[n] - acc;
            for i in (0..n).rev() {
                let s = state(i);
                let h = CoefficientSet::eval_opt(&c.dl_driver, &s)?;
                acc += 0.5 * (f[i] + f[i + 1]) * grid.dt(i) + h * p.dl[i] - z[i] * p.dbl[i];
                bwd[i] = y[i] - acc;
            }
            Ok((fwd, bwd, (y[n] - phi).abs()))
        })
        .collect::<Result<_>>()?;
    let mut forward = Vec::with_capacity(per_path.len());
    let mut backward = Vec::with_capacity(per_path.len());
    let mut terminal_max: f64 = 0.0;
    for (f, b, t) in per_path {
        forward.push(f);
        backward.push(b);
        terminal_max = terminal_max.max(t);
    }
    let stats = |r: &[Vec<f64>]| {
        let count = (r.len() * (n + 1)) as f64;
        let max = r.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let rms = (r.iter().flatten().map(|v| v * v).sum::<f64>() / count).sqrt();
        (max, rms)
    };
    let (forward_max, forward_rms) = stats(&forward);
    let (backward_max, backward_rms) = stats(&backward);
    let backward_mean_max = (0..=n)
        .map(|i| (backward.iter().map(|b| b[i]).sum::<f64>() / backward.len() as f64).abs())
        .fold(0.0, f64::max);
    Ok(ResidualReport {
        forward,
        backward,
        forward_max,
        forward_rms,
        backward_max,
        backward_rms,
        backward_mean_max,
        terminal_max,
    })
}
