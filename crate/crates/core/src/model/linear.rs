use serde::{Deserialize, Serialize};

use super::coefficients::{Coefficient, CoefficientSet, Gradient};
use crate::error::{Error, Result};

/// Deterministic bounded target profile `l(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetProfile {
    Constant(f64),
    /// Piecewise-linear interpolation, held constant outside the knots.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Default for TargetProfile {
    fn default() -> Self {
        TargetProfile::Constant(0.5)
    }
}

impl TargetProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            TargetProfile::Constant(l) if !l.is_finite() => Err(Error::param("l", "target must be finite")),
            TargetProfile::Constant(_) => Ok(()),
            TargetProfile::Tabulated { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::param(
                        "l",
                        "times and values must be non-empty and of equal length",
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::param("l", "times must be strictly increasing"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("l", "values must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            TargetProfile::Constant(l) => *l,
            TargetProfile::Tabulated { times, values } => interpolate(times, values, t),
        }
    }
}

pub(crate) fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        values[0]
    } else if k == times.len() {
        values[k - 1]
    } else {
        let (t0, t1) = (times[k - 1], times[k]);
        let w = (t - t0) / (t1 - t0);
        values[k - 1] * (1.0 - w) + values[k] * w
    }
}

/// Parameters of the linear cash-flow model
///
/// ```text
/// dx  = (-m1 x - n1 y + c1 v) dt - n2 z dB_L,   x(0) = x0
/// -dy = (-m1 y + m2 x + c2 v) dt - z dB_L,       y(T) = a_slope x(T)
/// J   = E[ int (v - l(t))^2 / 2 dt - y(0) ]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearModelSpec {
    pub m1: f64,
    pub m2: f64,
    pub n1: f64,
    pub n2: f64,
    pub c1: f64,
    pub c2: f64,
    pub a_slope: f64,
    pub l: TargetProfile,
}

impl Default for LinearModelSpec {
    fn default() -> Self {
        Self {
            m1: 0.1,
            m2: 0.2,
            n1: 0.3,
            n2: 0.4,
            c1: 0.5,
            c2: 0.5,
            a_slope: 0.5,
            l: TargetProfile::Constant(0.5),
        }
    }
}

impl LinearModelSpec {
    pub fn zero() -> Self {
        Self {
            m1: 0.0,
            m2: 0.0,
            n1: 0.0,
            n2: 0.0,
            c1: 0.0,
            c2: 0.0,
            a_slope: 0.0,
            l: TargetProfile::Constant(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("n1", self.n1),
            ("n2", self.n2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("a_slope", self.a_slope),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        self.l.validate()
    }

    /// Coefficient set with analytic gradients.
    pub fn coefficients(&self, x0: f64) -> Result<CoefficientSet> {
        self.validate()?;
        let Self {
            m1,
            m2,
            n1,
            n2,
            c1,
            c2,
            a_slope,
            ..
        } = *self;
        let target = self.l.clone();
        let target_grad = self.l.clone();
        let running = Coefficient::new("g", move |s| 0.5 * (s.v - target.at(s.t)).powi(2))
            .with_gradient(move |s| Gradient::new(0.0, 0.0, 0.0, s.v - target_grad.at(s.t)));
        Ok(CoefficientSet::new(
            Coefficient::affine("b", 0.0, -m1, -n1, 0.0, c1),
            Coefficient::affine("sigma", 0.0, 0.0, 0.0, -n2, 0.0),
            Coefficient::affine("f", 0.0, m2, -m1, 0.0, c2),
            Coefficient::affine("phi", 0.0, a_slope, 0.0, 0.0, 0.0),
            x0,
        )
        .with_costs(
            running,
            Coefficient::zero("h_T"),
            Coefficient::affine("gamma", 0.0, 0.0, -1.0, 0.0, 0.0),
        ))
    }
}
