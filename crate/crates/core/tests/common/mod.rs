//! Test-side oracles, written independently of the library's BVP solver.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use subdiff::model::LinearModelSpec;
use subdiff::subordination::{Ensemble, LevySpec, TimeGrid};

/// Flow of `w' = A w + g` over `[0, h]` for constant `A` and `g`, via the
/// exponential of the augmented matrix `[[A, g], [0, 0]]`.
fn affine_flow(a: [[f64; 2]; 2], g: [f64; 2], h: f64, w: [f64; 2]) -> [f64; 2] {
    let m = Matrix3::new(a[0][0], a[0][1], g[0], a[1][0], a[1][1], g[1], 0.0, 0.0, 0.0) * h;
    let out = m.exp() * Vector3::new(w[0], w[1], 1.0);
    [out[0], out[1]]
}

/// `w' = A w + g(t)` with `g` piecewise constant: `forcing[k] = (start, g)`,
/// sorted by start, the first starting at 0. Returns `w` at `times` (sorted).
pub fn propagate(a: [[f64; 2]; 2], forcing: &[(f64, [f64; 2])], w0: [f64; 2], times: &[f64]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut w) = (0.0, w0);
    for &target in times {
        while t < target {
            let k = forcing.iter().rposition(|(s, _)| *s <= t).unwrap();
            let next = forcing.get(k + 1).map_or(f64::INFINITY, |(s, _)| *s).min(target);
            w = affine_flow(a, forcing[k].1, next - t, w);
            t = next;
        }
        out.push(w);
    }
    out
}

/// Two-point problem `x(0) = x0`, `y(T) = slope x(T)` for `w = (x, y)`, solved by
/// linear shooting on `y(0)`.
pub fn two_point(a: [[f64; 2]; 2], forcing: &[(f64, [f64; 2])], x0: f64, slope: f64, times: &[f64]) -> Vec<[f64; 2]> {
    let horizon = *times.last().unwrap();
    let miss = |y0: f64| {
        let w = propagate(a, forcing, [x0, y0], &[horizon])[0];
        w[1] - slope * w[0]
    };
    let (m0, m1) = (miss(0.0), miss(1.0));
    let y0 = -m0 / (m1 - m0);
    propagate(a, forcing, [x0, y0], times)
}

/// State matrix of the cash model's mean dynamics.
pub fn cash_matrix(m: &LinearModelSpec) -> [[f64; 2]; 2] {
    [[-m.m1, -m.n1], [-m.m2, m.m1]]
}

/// Forcing of the mean dynamics under a constant control.
pub fn cash_forcing(m: &LinearModelSpec, u: f64) -> [f64; 2] {
    [m.c1 * u, -m.c2 * u]
}

pub fn cash_ensemble(paths: usize, steps: usize, seed: u64) -> Ensemble {
    Ensemble::simulate(
        &LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap(),
        TimeGrid::uniform(1.0, steps).unwrap(),
        0.0,
        paths,
        seed,
        10,
    )
    .unwrap()
}
