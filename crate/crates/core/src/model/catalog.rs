//! Named coefficient sets that configuration files can refer to.

use super::coefficients::{Coefficient, CoefficientSet, Gradient};
use super::linear::LinearModelSpec;
use crate::error::{Error, Result};

/// Registered model names.
pub const MODELS: &[&str] = &["cash-management", "cash-nonlinear", "trivial", "coupled-linear"];

/// Default strength of the smooth perturbation in `cash-nonlinear`.
pub const DEFAULT_NONLINEARITY: f64 = 0.2;

/// Builds a registered model. `linear` parameterizes the cash variants and
/// `nonlinearity` the perturbation of `cash-nonlinear`.
pub fn lookup(name: &str, linear: &LinearModelSpec, x0: f64, nonlinearity: f64) -> Result<CoefficientSet> {
    match name {
        "cash-management" => linear.coefficients(x0),
        "cash-nonlinear" => cash_nonlinear(linear, x0, nonlinearity),
        "trivial" => Ok(trivial(x0)),
        "coupled-linear" => Ok(coupled_linear(x0)),
        other => Err(Error::param(
            "model",
            format!("unknown model `{other}`; registered: {}", MODELS.join(", ")),
        )),
    }
}

/// `b = 0, sigma = 0, f = 0, phi(x) = x`: the solution is `x = y = x0`, `z = 0`.
pub fn trivial(x0: f64) -> CoefficientSet {
    CoefficientSet::new(
        Coefficient::zero("b"),
        Coefficient::zero("sigma"),
        Coefficient::zero("f"),
        Coefficient::affine("phi", 0.0, 1.0, 0.0, 0.0, 0.0),
        x0,
    )
}

/// `b = -y + v, sigma = -z, f = x, phi(x) = x`, quadratic control cost.
pub fn coupled_linear(x0: f64) -> CoefficientSet {
    CoefficientSet::new(
        Coefficient::affine("b", 0.0, 0.0, -1.0, 0.0, 1.0),
        Coefficient::affine("sigma", 0.0, 0.0, 0.0, -1.0, 0.0),
        Coefficient::affine("f", 0.0, 1.0, 0.0, 0.0, 0.0),
        Coefficient::affine("phi", 0.0, 1.0, 0.0, 0.0, 0.0),
        x0,
    )
    .with_costs(
        Coefficient::new("g", |s| 0.5 * s.v * s.v).with_gradient(|s| Gradient::new(0.0, 0.0, 0.0, s.v)),
        Coefficient::zero("h_T"),
        Coefficient::affine("gamma", 0.0, 0.0, -1.0, 0.0, 0.0),
    )
}

/// The cash model with smooth perturbations
/// `b += beta sin(x)`, `f += beta sin(y)`, `g += beta x^2 / 2`.
pub fn cash_nonlinear(linear: &LinearModelSpec, x0: f64, beta: f64) -> Result<CoefficientSet> {
    if !beta.is_finite() {
        return Err(Error::param("nonlinearity", "must be finite"));
    }
    let mut c = linear.coefficients(x0)?;
    let (m1, n1, c1, m2, c2) = (linear.m1, linear.n1, linear.c1, linear.m2, linear.c2);
    c.drift = Coefficient::new("b", move |s| -m1 * s.x - n1 * s.y + c1 * s.v + beta * s.x.sin())
        .with_gradient(move |s| Gradient::new(-m1 + beta * s.x.cos(), -n1, 0.0, c1));
    c.driver = Coefficient::new("f", move |s| m2 * s.x - m1 * s.y + c2 * s.v + beta * s.y.sin())
        .with_gradient(move |s| Gradient::new(m2, -m1 + beta * s.y.cos(), 0.0, c2));
    let target = linear.l.clone();
    let target_grad = linear.l.clone();
    c.running_cost = Some(
        Coefficient::new("g", move |s| {
            0.5 * (s.v - target.at(s.t)).powi(2) + 0.5 * beta * s.x * s.x
        })
        .with_gradient(move |s| Gradient::new(beta * s.x, 0.0, 0.0, s.v - target_grad.at(s.t))),
    );
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::State;

    #[test]
    fn every_registered_model_builds_with_consistent_gradients() {
        let points: Vec<State> = (0..25)
            .map(|k| {
                let a = k as f64 * 0.37;
                State::new(0.04 * k as f64, a.sin(), a.cos(), 0.3 * a.sin(), 0.5 - 0.1 * a)
            })
            .collect();
        for name in MODELS {
            let c = lookup(name, &LinearModelSpec::default(), 1.0, DEFAULT_NONLINEARITY).unwrap();
            assert!(c.gradient_consistency(&points) < 1e-5, "{name}");
        }
        assert!(lookup("nope", &LinearModelSpec::default(), 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_nonlinearity_matches_the_linear_model() {
        let lin = LinearModelSpec::default();
        let a = cash_nonlinear(&lin, 1.0, 0.0).unwrap();
        let b = lin.coefficients(1.0).unwrap();
        let s = State::new(0.3, 0.7, -0.2, 0.1, 0.9);
        assert_eq!(a.drift.eval(&s), b.drift.eval(&s));
        assert_eq!(a.driver.eval(&s), b.driver.eval(&s));
    }
}
