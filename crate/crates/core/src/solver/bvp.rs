//! Deterministic two-point boundary value problems for linear forward-backward ODEs.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::subordination::TimeGrid;

/// Substeps of the integrator per grid cell.
pub const DEFAULT_SUBSTEPS: usize = 32;

/// Terminal-condition residual the shooting solution must reach.
pub const TERMINAL_TOL: f64 = 1e-10;

type MatrixFn<'a> = dyn Fn(f64) -> [[f64; 2]; 2] + Sync + 'a;
type ForcingFn<'a> = dyn Fn(f64) -> [f64; 2] + Sync + 'a;

/// `d/dt (u, w) = A(t) (u, w) + F(t)` with `u(0) = initial` and
/// `w(T) = slope u(T) + offset`.
///
/// The forcing is only evaluated strictly inside integrator substeps, so it may
/// jump at grid nodes (spike windows).
pub struct LinearBvp<'a> {
    pub matrix: &'a MatrixFn<'a>,
    pub forcing: &'a ForcingFn<'a>,
    pub initial: f64,
    pub slope: f64,
    pub offset: f64,
}

/// Node values of the deterministic solution.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub terminal_residual: f64,
    /// Derivative of the terminal mismatch with respect to the shooting parameter.
    pub shooting_derivative: f64,
}

/// Constant matrix helper.
pub fn constant_matrix(a: [[f64; 2]; 2]) -> impl Fn(f64) -> [[f64; 2]; 2] + Sync {
    move |_| a
}

// Two-stage Gauss-Legendre collocation (order 4, interior stage times only).
const SQRT3_6: f64 = 0.288_675_134_594_812_9;
const GL_C: [f64; 2] = [0.5 - SQRT3_6, 0.5 + SQRT3_6];
const GL_A: [[f64; 2]; 2] = [[0.25, 0.25 - SQRT3_6], [0.25 + SQRT3_6, 0.25]];

fn gauss_step(bvp: &LinearBvp<'_>, t: f64, h: f64, state: [f64; 2]) -> [f64; 2] {
    // Stages k_i = A(t_i)(state + h sum_j a_ij k_j) + F(t_i), a 4x4 linear system.
    let times = [t + GL_C[0] * h, t + GL_C[1] * h];
    let mats = [(bvp.matrix)(times[0]), (bvp.matrix)(times[1])];
    let mut lhs = Matrix4::<f64>::identity();
    let mut rhs = Vector4::<f64>::zeros();
    for i in 0..2 {
        let f = (bvp.forcing)(times[i]);
        for r in 0..2 {
            rhs[2 * i + r] = mats[i][r][0] * state[0] + mats[i][r][1] * state[1] + f[r];
            for j in 0..2 {
                for c in 0..2 {
                    lhs[(2 * i + r, 2 * j + c)] -= h * GL_A[i][j] * mats[i][r][c];
                }
            }
        }
    }
    let k = lhs
        .lu()
        .solve(&rhs)
        .expect("collocation system is regular for small steps");
    [state[0] + 0.5 * h * (k[0] + k[2]), state[1] + 0.5 * h * (k[1] + k[3])]
}

fn integrate(bvp: &LinearBvp<'_>, grid: &TimeGrid, substeps: usize, start: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(grid.nodes().len());
    let mut s = start;
    out.push(s);
    for i in 0..grid.steps() {
        let h = grid.dt(i) / substeps as f64;
        for k in 0..substeps {
            s = gauss_step(bvp, grid.t(i) + k as f64 * h, h, s);
        }
        out.push(s);
    }
    out
}

/// Solves by affine shooting on the initial value of the backward component.
pub fn solve_linear_bvp(bvp: &LinearBvp<'_>, grid: &TimeGrid, substeps: usize) -> Result<BvpSolution> {
    let substeps = substeps.max(1);
    let mismatch = |path: &[[f64; 2]]| {
        let end = path[path.len() - 1];
        end[1] - bvp.slope * end[0] - bvp.offset
    };
    let g0 = mismatch(&integrate(bvp, grid, substeps, [bvp.initial, 0.0]));
    let g1 = mismatch(&integrate(bvp, grid, substeps, [bvp.initial, 1.0]));
    let derivative = g1 - g0;
    if !(derivative.abs() > 1e-12) {
        return Err(Error::IllPosedBvp { derivative });
    }
    let mut w0 = -g0 / derivative;
    let mut path = integrate(bvp, grid, substeps, [bvp.initial, w0]);
    let mut residual = mismatch(&path);
    if residual.abs() >= TERMINAL_TOL {
        // One more affine correction absorbs rounding in the two probe runs.
        w0 -= residual / derivative;
        path = integrate(bvp, grid, substeps, [bvp.initial, w0]);
        residual = mismatch(&path);
    }
    if residual.abs() >= TERMINAL_TOL {
        return Err(Error::IllPosedBvp { derivative });
    }
    Ok(BvpSolution {
        forward: path.iter().map(|s| s[0]).collect(),
        backward: path.iter().map(|s| s[1]).collect(),
        terminal_residual: residual,
        shooting_derivative: derivative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    #[test]
    fn vanishing_dynamics() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let a = constant_matrix([[0.0; 2]; 2]);
        let f = |_: f64| [0.0, 0.0];
        let bvp = LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: 1.0,
            slope: 0.0,
            offset: 0.0,
        };
        let s = solve_linear_bvp(&bvp, &grid, 4).unwrap();
        assert!(s.forward.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        assert!(s.backward.iter().all(|&y| y.abs() < 1e-14));
    }

    #[test]
    fn matches_matrix_exponential() {
        // Homogeneous system with constant matrix: z(t) = exp(A t) z(0).
        let (m1, m2, n1, a_slope) = (0.1, 0.2, 0.3, 0.5);
        let a = [[-m1, n1], [m2, m1]];
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let af = constant_matrix(a);
        let f = |_: f64| [0.0, 0.0];
        let bvp = LinearBvp {
            matrix: &af,
            forcing: &f,
            initial: 1.0,
            slope: -a_slope,
            offset: 0.0,
        };
        let s = solve_linear_bvp(&bvp, &grid, DEFAULT_SUBSTEPS).unwrap();
        let m = Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
        let e = (m * 1.0).exp();
        // q0 solves e21 + e22 q0 = -a (e11 + e12 q0).
        let q0 = -(e[(1, 0)] + a_slope * e[(0, 0)]) / (e[(1, 1)] + a_slope * e[(0, 1)]);
        for (i, &t) in grid.nodes().iter().enumerate() {
            let z = (m * t).exp() * nalgebra::Vector2::new(1.0, q0);
            assert!((s.forward[i] - z[0]).abs() < 1e-8);
            assert!((s.backward[i] - z[1]).abs() < 1e-8);
        }
        assert!(s.terminal_residual.abs() < TERMINAL_TOL);
    }

    #[test]
    fn degenerate_shooting_is_rejected() {
        // w' = 0 and w(T) = w(T) + 0 gives a mismatch independent of w(0).
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let a = constant_matrix([[0.0, 0.0], [0.0, 0.0]]);
        let f = |_: f64| [0.0, 0.0];
        let bvp = LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: 1.0,
            slope: 0.0,
            offset: 0.0,
        };
        assert!(solve_linear_bvp(&bvp, &grid, 2).is_ok());
        // Make the terminal condition read w(T) = w(T): slope on u but w decoupled and identical.
        let a = constant_matrix([[0.0, 1.0], [0.0, 0.0]]);
        let bvp = LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: 0.0,
            slope: 1.0,
            offset: 0.0,
        };
        // u(T) = w0 T, w(T) = w0: mismatch w0 (1 - T) vanishes identically for T = 1.
        let err = solve_linear_bvp(&bvp, &grid, 2).unwrap_err();
        assert!(matches!(err, Error::IllPosedBvp { .. }));
    }

    #[test]
    fn piecewise_forcing_is_integrated_exactly() {
        // u' = 1 on [0.4, 0.5), u(0) = 0: u(1) = 0.1 exactly.
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let a = constant_matrix([[0.0; 2]; 2]);
        let f = |t: f64| [if (0.4..0.5).contains(&t) { 1.0 } else { 0.0 }, 0.0];
        let bvp = LinearBvp {
            matrix: &a,
            forcing: &f,
            initial: 0.0,
            slope: 1.0,
            offset: 0.0,
        };
        let s = solve_linear_bvp(&bvp, &grid, 4).unwrap();
        assert!((s.forward[100] - 0.1).abs() < 1e-12);
        assert!((s.backward[100] - 0.1).abs() < 1e-12);
    }
}
