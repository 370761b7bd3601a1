use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jump part of a subordinator `S_r = kappa * r + S^0_r`.
///
/// Stable and tempered-stable laws use the unit Laplace scale:
/// `E[exp(-lambda S^0_r)] = exp(-r lambda^alpha)` for the stable case and
/// `exp(-r ((lambda + theta)^alpha - theta^alpha))` for the tempered case.
/// Compound-Poisson jumps are exponential with mean `jump_scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevyFamily {
    PureDrift,
    Stable { alpha: f64 },
    TemperedStable { alpha: f64, lambda: f64 },
    CompoundPoisson { rate: f64, jump_scale: f64 },
}

/// Subordinator specification: drift `kappa > 0` plus a jump family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevySpec", into = "RawLevySpec")]
pub struct LevySpec {
    kappa: f64,
    family: LevyFamily,
}

impl LevySpec {
    pub fn new(kappa: f64, family: LevyFamily) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param(
                "kappa",
                format!("drift must satisfy kappa > 0 so that 0 <= dL/dt <= 1/kappa, got {kappa}"),
            ));
        }
        match family {
            LevyFamily::PureDrift => {}
            LevyFamily::Stable { alpha } => check_alpha(alpha)?,
            LevyFamily::TemperedStable { alpha, lambda } => {
                check_alpha(alpha)?;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::param(
                        "lambda",
                        format!("tempering must be positive, got {lambda}"),
                    ));
                }
            }
            LevyFamily::CompoundPoisson { rate, jump_scale } => {
                if !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::param("rate", format!("jump rate must be >= 0, got {rate}")));
                }
                if !(jump_scale > 0.0 && jump_scale.is_finite()) {
                    return Err(Error::param(
                        "jump_scale",
                        format!("jump scale must be positive, got {jump_scale}"),
                    ));
                }
            }
        }
        Ok(Self { kappa, family })
    }

    pub fn pure_drift(kappa: f64) -> Result<Self> {
        Self::new(kappa, LevyFamily::PureDrift)
    }

    pub fn stable(kappa: f64, alpha: f64) -> Result<Self> {
        Self::new(kappa, LevyFamily::Stable { alpha })
    }

    pub fn tempered_stable(kappa: f64, alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(kappa, LevyFamily::TemperedStable { alpha, lambda })
    }

    pub fn compound_poisson(kappa: f64, rate: f64, jump_scale: f64) -> Result<Self> {
        Self::new(kappa, LevyFamily::CompoundPoisson { rate, jump_scale })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn family(&self) -> LevyFamily {
        self.family
    }

    /// `-log E[exp(-lambda S_r)] / r`, drift included.
    pub fn laplace_exponent(&self, lambda: f64) -> f64 {
        let jumps = match self.family {
            LevyFamily::PureDrift => 0.0,
            LevyFamily::Stable { alpha } => lambda.powf(alpha),
            LevyFamily::TemperedStable { alpha, lambda: theta } => (lambda + theta).powf(alpha) - theta.powf(alpha),
            LevyFamily::CompoundPoisson { rate, jump_scale } => {
                rate * jump_scale * lambda / (1.0 + jump_scale * lambda)
            }
        };
        self.kappa * lambda + jumps
    }

    /// `E[S_1]`; infinite for the untempered stable family.
    pub fn mean_rate(&self) -> f64 {
        let jumps = match self.family {
            LevyFamily::PureDrift => 0.0,
            LevyFamily::Stable { .. } => f64::INFINITY,
            LevyFamily::TemperedStable { alpha, lambda } => alpha * lambda.powf(alpha - 1.0),
            LevyFamily::CompoundPoisson { rate, jump_scale } => rate * jump_scale,
        };
        self.kappa + jumps
    }

    /// Whether the family is simulated as increments on an operational-time grid.
    pub fn is_infinite_activity(&self) -> bool {
        matches!(
            self.family,
            LevyFamily::Stable { .. } | LevyFamily::TemperedStable { .. }
        )
    }

    /// Exact-in-law draw of the jump part `S^0` accumulated over operational time `dr`.
    ///
    /// Only meaningful for the stable and tempered-stable families; the other
    /// families are simulated jump by jump.
    pub fn sample_increment<R: Rng + ?Sized>(&self, dr: f64, rng: &mut R) -> f64 {
        match self.family {
            LevyFamily::Stable { alpha } => dr.powf(1.0 / alpha) * sample_positive_stable(alpha, rng),
            LevyFamily::TemperedStable { alpha, lambda } => {
                // Exponential tilting of the stable marginal by acceptance-rejection.
                let scale = dr.powf(1.0 / alpha);
                loop {
                    let x = scale * sample_positive_stable(alpha, rng);
                    let u: f64 = rng.random();
                    if u < (-lambda * x).exp() {
                        return x;
                    }
                }
            }
            LevyFamily::PureDrift => 0.0,
            LevyFamily::CompoundPoisson { .. } => {
                unreachable!("compound-Poisson paths are simulated jump by jump")
            }
        }
    }

    pub(crate) fn exp_jump(&self) -> Option<(Exp<f64>, Exp<f64>)> {
        match self.family {
            LevyFamily::CompoundPoisson { rate, jump_scale } if rate > 0.0 => Some((
                Exp::new(rate).expect("rate validated"),
                Exp::new(1.0 / jump_scale).expect("scale validated"),
            )),
            _ => None,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::param(
            "alpha",
            format!("stability index must lie in (0,1), got {alpha}"),
        ))
    }
}

/// Kanter's representation of a positive stable variable with
/// `E[exp(-lambda X)] = exp(-lambda^alpha)`.
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u * PI;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevySpec {
    family: String,
    kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jump_scale: Option<f64>,
}

impl TryFrom<RawLevySpec> for LevySpec {
    type Error = Error;

    fn try_from(raw: RawLevySpec) -> Result<Self> {
        let need = |v: Option<f64>, name: &'static str| {
            v.ok_or_else(|| Error::param(name, format!("required for family `{}`", raw.family)))
        };
        let family = match raw.family.as_str() {
            "pure-drift" => LevyFamily::PureDrift,
            "stable" => LevyFamily::Stable {
                alpha: need(raw.alpha, "alpha")?,
            },
            "tempered-stable" => LevyFamily::TemperedStable {
                alpha: need(raw.alpha, "alpha")?,
                lambda: need(raw.lambda, "lambda")?,
            },
            "compound-poisson" => LevyFamily::CompoundPoisson {
                rate: need(raw.rate, "rate")?,
                jump_scale: need(raw.jump_scale, "jump_scale")?,
            },
            other => {
                return Err(Error::param(
                    "family",
                    format!(
                        "unknown family `{other}` (expected pure-drift, stable, tempered-stable, compound-poisson)"
                    ),
                ))
            }
        };
        LevySpec::new(raw.kappa, family)
    }
}

impl From<LevySpec> for RawLevySpec {
    fn from(spec: LevySpec) -> Self {
        let mut raw = RawLevySpec {
            family: String::new(),
            kappa: spec.kappa,
            alpha: None,
            lambda: None,
            rate: None,
            jump_scale: None,
        };
        raw.family = match spec.family {
            LevyFamily::PureDrift => "pure-drift",
            LevyFamily::Stable { alpha } => {
                raw.alpha = Some(alpha);
                "stable"
            }
            LevyFamily::TemperedStable { alpha, lambda } => {
                raw.alpha = Some(alpha);
                raw.lambda = Some(lambda);
                "tempered-stable"
            }
            LevyFamily::CompoundPoisson { rate, jump_scale } => {
                raw.rate = Some(rate);
                raw.jump_scale = Some(jump_scale);
                "compound-poisson"
            }
        }
        .to_string();
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, Stream};

    #[test]
    fn rejects_non_positive_kappa() {
        assert!(matches!(
            LevySpec::pure_drift(0.0),
            Err(Error::Parameter { name: "kappa", .. })
        ));
        assert!(LevySpec::stable(-1.0, 0.5).is_err());
        assert!(LevySpec::stable(1.0, 1.0).is_err());
        assert!(LevySpec::compound_poisson(1.0, 1.0, 0.0).is_err());
        assert!(LevySpec::compound_poisson(1.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn json_round_trip_uses_flat_keys() {
        let spec = LevySpec::tempered_stable(1.5, 0.6, 2.0).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(
            text,
            r#"{"family":"tempered-stable","kappa":1.5,"alpha":0.6,"lambda":2.0}"#
        );
        let back: LevySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let bad = serde_json::from_str::<LevySpec>(r#"{"family":"stable","kappa":1.0}"#);
        assert!(bad.is_err());
        let unknown = serde_json::from_str::<LevySpec>(r#"{"family":"pure-drift","kappa":1.0,"beta":2}"#);
        assert!(unknown.is_err());
    }

    #[test]
    fn positive_stable_matches_laplace_transform() {
        // E[exp(-X)] = exp(-1) for every alpha under the unit scale.
        let mut rng = path_rng(11, 0, Stream::Subordinator);
        for &alpha in &[0.3, 0.5, 0.8] {
            let n = 40_000;
            let samples: Vec<f64> = (0..n)
                .map(|_| (-sample_positive_stable(alpha, &mut rng)).exp())
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - (-1.0f64).exp()).abs() < 4.0 * se, "alpha {alpha}: {mean}");
        }
    }

    #[test]
    fn tempered_increment_has_closed_form_mean() {
        let spec = LevySpec::tempered_stable(1.0, 0.5, 1.0).unwrap();
        let mut rng = path_rng(5, 1, Stream::Subordinator);
        let n = 40_000;
        let dr = 0.1;
        let xs: Vec<f64> = (0..n).map(|_| spec.sample_increment(dr, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let expected = dr * (spec.mean_rate() - spec.kappa());
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }
}
