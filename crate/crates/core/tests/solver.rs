mod common;

use common::{cash_ensemble, cash_forcing, cash_matrix, two_point};
use subdiff::model::LinearModelSpec;
use subdiff::solver::{residual_check, solve_fbsde, Component, ControlProcess, SolverOptions};
use subdiff::subordination::{Ensemble, LevySpec, TimeGrid};

fn options() -> SolverOptions {
    SolverOptions {
        tol: 1e-10,
        picard_max: 80,
        batches: 8,
        ..SolverOptions::default()
    }
}

fn oracle(model: &LinearModelSpec, u: f64, grid: &TimeGrid) -> Vec<[f64; 2]> {
    let times: Vec<f64> = (0..=grid.steps()).map(|i| grid.t(i)).collect();
    two_point(
        cash_matrix(model),
        &[(0.0, cash_forcing(model, u))],
        1.0,
        model.a_slope,
        &times,
    )
}

/// Largest deviation of the mean `(x, y)` from the oracle, and the largest standard error.
fn mean_deviation(steps: usize, paths: usize) -> (f64, f64) {
    let model = LinearModelSpec::default();
    let coeffs = model.coefficients(1.0).unwrap();
    let ensemble = cash_ensemble(paths, steps, 11);
    let sol = solve_fbsde(&coeffs, &ControlProcess::constant(0.5), &ensemble, &options()).unwrap();
    let expected = oracle(&model, 0.5, ensemble.grid());
    let (mut dev, mut se) = (0.0f64, 0.0f64);
    for (c, k) in [(Component::X, 0), (Component::Y, 1)] {
        for (e, w) in sol.estimates(c).iter().zip(&expected) {
            dev = dev.max((e.mean - w[k]).abs());
            se = se.max(e.se);
        }
    }
    (dev, se)
}

#[test]
fn cash_means_follow_the_exponential_oracle() {
    let (dev, se) = mean_deviation(50, 2000);
    assert!(dev <= 4.0 * se + 2e-5, "deviation {dev:e}, se {se:e}");
}

#[test]
fn mean_error_shrinks_at_second_order() {
    let errs: Vec<f64> = [25, 50, 100].iter().map(|&n| mean_deviation(n, 400).0).collect();
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((1.6..2.4).contains(&slope), "errors {errs:?}");
    }
}

#[test]
fn frozen_clock_reduces_to_the_deterministic_system() {
    let model = LinearModelSpec::default();
    let coeffs = model.coefficients(1.0).unwrap();
    let spec = LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap();
    let ensemble = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 100).unwrap(), 2.0, 64, 3, 10).unwrap();
    assert!(ensemble.paths().iter().all(|p| p.dl.iter().all(|&d| d == 0.0)));
    let sol = solve_fbsde(&coeffs, &ControlProcess::constant(0.5), &ensemble, &options()).unwrap();
    let expected = oracle(&model, 0.5, ensemble.grid());
    for m in 0..sol.paths() {
        for (i, w) in expected.iter().enumerate() {
            assert!((sol.x[m][i] - w[0]).abs() < 1e-5);
            assert!((sol.y[m][i] - w[1]).abs() < 1e-5);
        }
        assert!(sol.z[m].iter().all(|&z| z == 0.0));
    }
}

#[test]
fn z_vanishes_where_the_clock_is_frozen() {
    let coeffs = LinearModelSpec::default().coefficients(1.0).unwrap();
    let ensemble = cash_ensemble(500, 50, 5);
    let sol = solve_fbsde(&coeffs, &ControlProcess::constant(0.0), &ensemble, &options()).unwrap();
    let mut frozen = 0;
    for (p, z) in ensemble.paths().iter().zip(&sol.z) {
        for (d, z) in p.dl.iter().zip(z) {
            if *d == 0.0 {
                frozen += 1;
                assert_eq!(*z, 0.0);
            }
        }
    }
    assert!(frozen > 0);
}

#[test]
fn picard_converges_below_tolerance() {
    let coeffs = LinearModelSpec::default().coefficients(1.0).unwrap();
    let ensemble = cash_ensemble(400, 50, 9);
    let opts = options();
    let sol = solve_fbsde(&coeffs, &ControlProcess::constant(0.5), &ensemble, &opts).unwrap();
    for changes in &sol.changes {
        let last = *changes.last().unwrap();
        assert!(last < opts.tol, "changes {changes:?}");
        assert!(last < changes[0]);
    }
}

#[test]
fn residual_check_flags_an_injected_fault() {
    let coeffs = LinearModelSpec::default().coefficients(1.0).unwrap();
    let ensemble = cash_ensemble(300, 50, 13);
    let mut sol = solve_fbsde(&coeffs, &ControlProcess::constant(0.5), &ensemble, &options()).unwrap();
    let clean = residual_check(&sol, &coeffs, &ensemble).unwrap();
    assert!(clean.forward_max < 1e-8 && clean.terminal_max < 1e-8, "{clean:?}");
    sol.y[17][20] += 0.1;
    let dirty = residual_check(&sol, &coeffs, &ensemble).unwrap();
    assert!(dirty.backward_max > clean.backward_max + 0.05);
}
