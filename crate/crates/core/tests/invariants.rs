use std::sync::Arc;

use proptest::prelude::*;
use subdiff::casestudy::cash_adjoint_oracle;
use subdiff::control::eval_hamiltonian;
use subdiff::model::{LinearModelSpec, State};
use subdiff::solver::ControlDomain;
use subdiff::subordination::{simulate_path, LevySpec, TimeGrid};

fn levy() -> impl Strategy<Value = LevySpec> {
    let kappa = 0.25f64..4.0;
    prop_oneof![
        kappa.clone().prop_map(|k| LevySpec::pure_drift(k).unwrap()),
        (kappa.clone(), 0.2f64..0.9).prop_map(|(k, a)| LevySpec::stable(k, a).unwrap()),
        (kappa.clone(), 0.2f64..0.9, 0.1f64..3.0).prop_map(|(k, a, l)| LevySpec::tempered_stable(k, a, l).unwrap()),
        (kappa, 0.1f64..5.0, 0.05f64..1.0).prop_map(|(k, r, s)| LevySpec::compound_poisson(k, r, s).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_respect_the_clock_bound(spec in levy(), r0 in 0.0f64..0.5, seed in any::<u64>(), index in 0u64..1000) {
        let grid = Arc::new(TimeGrid::uniform(1.0, 40).unwrap());
        let p = simulate_path(&spec, &grid, r0, 4, seed, index).unwrap();
        for (i, (&d, &db)) in p.dl.iter().zip(&p.dbl).enumerate() {
            prop_assert!(d >= 0.0 && d <= grid.dt(i) / spec.kappa());
            prop_assert!((p.l[i + 1] - p.l[i] - d).abs() <= 1e-9);
            if d == 0.0 {
                prop_assert_eq!(db, 0.0);
            }
        }
        prop_assert!(p.r.iter().all(|&r| r >= 0.0));
        prop_assert_eq!(p.l[0], 0.0);
        // the clock is frozen while the initial overshoot runs off
        for i in 0..grid.steps() {
            if grid.t(i + 1) <= r0 {
                prop_assert_eq!(p.dl[i], 0.0);
            }
        }
    }

    #[test]
    fn cash_hamiltonian_margin_is_half_the_squared_distance(
        p in -3.0f64..3.0,
        q in -3.0f64..3.0,
        x in -5.0f64..5.0,
        y in -5.0f64..5.0,
        z in -2.0f64..2.0,
        v in -4.0f64..4.0,
    ) {
        let model = LinearModelSpec::default();
        let coeffs = model.coefficients(1.0).unwrap();
        let t = 0.3;
        let best = -model.c1 * q + model.c2 * p + model.l.at(t);
        let h = |u: f64| eval_hamiltonian(&coeffs, &State::new(t, x, y, z, u), p, q);
        let margin = h(v) - h(best);
        prop_assert!((margin - 0.5 * (v - best).powi(2)).abs() <= 1e-10 * (1.0 + margin.abs()));
    }

    #[test]
    fn clipping_lands_in_the_domain(v in -10.0f64..10.0, lo in -3.0f64..0.0, width in 0.0f64..3.0) {
        let interval = ControlDomain::Interval { lo, hi: lo + width };
        prop_assert!(interval.contains(interval.clip(v)));
        let finite = ControlDomain::Finite { values: vec![lo, lo + width, 0.5] };
        let c = finite.clip(v);
        prop_assert!(finite.contains(c));
        prop_assert!([lo, lo + width, 0.5].iter().all(|u| (u - v).abs() >= (c - v).abs()));
    }
}

#[test]
fn adjoint_oracle_satisfies_its_boundary_conditions() {
    let model = LinearModelSpec::default();
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let o = cash_adjoint_oracle(&model, &grid).unwrap();
    assert!((o.p[0] - 1.0).abs() < 1e-12);
    let n = grid.steps();
    assert!((o.q[n] + model.a_slope * o.p[n]).abs() < 1e-10);
}
