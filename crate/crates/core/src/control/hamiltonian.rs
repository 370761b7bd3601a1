use rayon::prelude::*;
use serde::Serialize;

use super::adjoint::{trajectory_state, AdjointSolution};
use crate::error::{Error, Result};
use crate::model::{CoefficientSet, State};
use crate::solver::FbsdeSolution;

/// `H = q b(t,x,y,v) - p f(t,x,y,v) + g(t,x,y,v)`.
///
/// `z` is part of the state for symmetry with the system but no term of `H` reads it.
pub fn eval_hamiltonian(coeffs: &CoefficientSet, state: &State, p: f64, q: f64) -> f64 {
    weighted_hamiltonian(coeffs, state, p, q, 1.0)
}

/// Hamiltonian scaled by a cost weight: `q b - p f + weight g`.
pub(crate) fn weighted_hamiltonian(coeffs: &CoefficientSet, state: &State, p: f64, q: f64, weight: f64) -> f64 {
    let g = coeffs.running_cost.as_ref().map_or(0.0, |g| g.eval(state));
    q * coeffs.drift.eval(state) - p * coeffs.driver.eval(state) + weight * g
}

/// Where the Hamiltonian inequality is tightest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offender {
    pub path: usize,
    pub node: usize,
    pub t: f64,
    pub probe: f64,
    pub candidate: f64,
    /// `H(probe) - H(candidate)`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmpReport {
    /// Smallest `H(v) - H(u)` over nodes, paths and probes.
    pub min_margin: f64,
    pub worst: Option<Offender>,
    pub tol: f64,
    pub passes: bool,
    /// Node-wise minimum margin over paths and probes.
    pub node_margins: Vec<f64>,
}

/// Checks `H(t, x, y, z, v, p, q) >= H(t, x, y, z, u, p, q) - tol` for every probe
/// `v`, at every node and path of a trajectory solved under the candidate `u`.
pub fn check_smp(
    coeffs: &CoefficientSet,
    trajectory: &FbsdeSolution,
    adjoint: &AdjointSolution,
    probes: &[f64],
    tol: f64,
) -> Result<SmpReport> {
    check_weighted_smp(coeffs, trajectory, adjoint, probes, tol, 1.0)
}

pub(crate) fn check_weighted_smp(
    coeffs: &CoefficientSet,
    trajectory: &FbsdeSolution,
    adjoint: &AdjointSolution,
    probes: &[f64],
    tol: f64,
    weight: f64,
) -> Result<SmpReport> {
    if adjoint.paths() != trajectory.paths() || *adjoint.grid != *trajectory.grid {
        return Err(Error::Domain("adjoint is not aligned with the trajectory".into()));
    }
    if probes.is_empty() {
        return Err(Error::Domain("the probe set is empty".into()));
    }
    let nodes = trajectory.grid.nodes().len();
    let per_node: Vec<(f64, Option<Offender>)> = (0..nodes)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, None);
            for m in 0..trajectory.paths() {
                let s = trajectory_state(trajectory, m, i);
                let (p, q) = (adjoint.p[m][i], adjoint.q[m][i]);
                let h_u = weighted_hamiltonian(coeffs, &s, p, q, weight);
                for &v in probes {
                    let margin = weighted_hamiltonian(coeffs, &State { v, ..s }, p, q, weight) - h_u;
                    if margin < best.0 {
                        best = (
                            margin,
                            Some(Offender {
                                path: m,
                                node: i,
                                t: s.t,
                                probe: v,
                                candidate: s.v,
                                margin,
                            }),
                        );
                    }
                }
            }
            best
        })
        .collect();
    let node_margins: Vec<f64> = per_node.iter().map(|b| b.0).collect();
    let (min_margin, worst) = per_node
        .into_iter()
        .fold((f64::INFINITY, None), |a, b| if b.0 < a.0 { b } else { a });
    Ok(SmpReport {
        min_margin,
        worst,
        tol,
        passes: min_margin >= -tol,
        node_margins,
    })
}

/// Evenly spaced probes `lo, ..., hi`.
pub fn probe_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}
