use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coefficients::{Coefficient, CoefficientSet, State};
use crate::error::{Error, Result};

/// Witnesses must violate an inequality by more than this.
pub const WITNESS_TOL: f64 = 1e-9;

/// Closed box of arguments; a degenerate interval pins the argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    pub t: [f64; 2],
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub v: [f64; 2],
}

impl DomainBox {
    /// `[-r, r]` in every state argument, `t` in `[0, horizon]`.
    pub fn symmetric(horizon: f64, r: f64) -> Self {
        Self {
            t: [0.0, horizon],
            x: [-r, r],
            y: [-r, r],
            z: [-r, r],
            v: [-r, r],
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("t", self.t),
            ("x", self.x),
            ("y", self.y),
            ("z", self.z),
            ("v", self.v),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Domain(format!(
                    "box side {name} = [{lo}, {hi}] is not a bounded interval"
                )));
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> State {
        let u = |rng: &mut R, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();
        State::new(
            u(rng, self.t),
            u(rng, self.x),
            u(rng, self.y),
            u(rng, self.z),
            u(rng, self.v),
        )
    }

    fn center(&self) -> State {
        let m = |[lo, hi]: [f64; 2]| 0.5 * (lo + hi);
        State::new(m(self.t), m(self.x), m(self.y), m(self.z), m(self.v))
    }
}

fn distance(a: &State, b: &State) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2) + (a.v - b.v).powi(2)).sqrt()
}

/// Sampled lower bound on the Lipschitz constant of one coefficient in `(x, y, z, v)`.
///
/// Besides uniform pairs, every sampled point is paired with a short step
/// along the local gradient, where the difference quotient is largest.
pub fn lipschitz_estimate(c: &Coefficient, domain: &DomainBox, samples: usize, seed: u64) -> Result<f64> {
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(State, State)> = (0..samples)
        .map(|_| (domain.sample(&mut rng), domain.sample(&mut rng)))
        .collect();
    let quotients = pairs
        .par_iter()
        .map(|(a, b)| {
            let (fa, fb) = (c.try_eval(a)?, c.try_eval(b)?);
            let d = distance(a, b);
            let mut best = if d > 0.0 { (fa - fb).abs() / d } else { 0.0 };
            let g = c.try_gradient(a)?;
            let widths = [
                domain.x[1] - domain.x[0],
                domain.y[1] - domain.y[0],
                domain.z[1] - domain.z[0],
                domain.v[1] - domain.v[0],
            ];
            let dir = [g.x, g.y, g.z, g.v]
                .iter()
                .zip(widths)
                .map(|(g, w)| if w > 0.0 { *g } else { 0.0 })
                .collect::<Vec<_>>();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > 0.0 {
                let h = 1e-3 * widths.iter().cloned().fold(0.0, f64::max);
                let mut s = *a;
                s.x += h * dir[0] / norm;
                s.y += h * dir[1] / norm;
                s.z += h * dir[2] / norm;
                s.v += h * dir[3] / norm;
                let fs = c.try_eval(&s)?;
                best = best.max((fs - fa).abs() / distance(a, &s));
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(quotients.into_iter().fold(0.0, f64::max))
}

/// Lipschitz estimates for every coefficient of the set, in [`CoefficientSet::all`] order.
pub fn check_lipschitz(
    coeffs: &CoefficientSet,
    domain: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<Vec<(&'static str, f64)>> {
    if samples < 1000 {
        return Err(Error::param(
            "samples",
            format!("at least 1000 samples are required, got {samples}"),
        ));
    }
    coeffs
        .all()
        .into_iter()
        .map(|c| Ok((c.name(), lipschitz_estimate(c, domain, samples, seed)?)))
        .collect()
}

/// Left-hand side of the drift-pair inequality:
/// `(b1 - b2)(y1 - y2) - (f1 - f2)(x1 - x2)`.
pub fn drift_pair_value(coeffs: &CoefficientSet, a: &State, b: &State) -> f64 {
    (coeffs.drift.eval(a) - coeffs.drift.eval(b)) * (a.y - b.y)
        - (coeffs.driver.eval(a) - coeffs.driver.eval(b)) * (a.x - b.x)
}

/// Left-hand side of the diffusion inequality:
/// `(s1 - s2)(z1 - z2) + (d1 - d2)(y1 - y2) - (h1 - h2)(x1 - x2)`.
pub fn diffusion_value(coeffs: &CoefficientSet, a: &State, b: &State) -> f64 {
    let opt = |c: &Option<Coefficient>, s: &State| c.as_ref().map_or(0.0, |c| c.eval(s));
    (coeffs.diffusion.eval(a) - coeffs.diffusion.eval(b)) * (a.z - b.z)
        + (opt(&coeffs.dl_drift, a) - opt(&coeffs.dl_drift, b)) * (a.y - b.y)
        - (opt(&coeffs.dl_driver, a) - opt(&coeffs.dl_driver, b)) * (a.x - b.x)
}

/// A pair of argument points at which an inequality fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub v: f64,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub z1: f64,
    pub z2: f64,
    /// Left-hand side at the witness.
    pub value: f64,
    /// Right-hand side `-C |difference|^2`.
    pub bound: f64,
}

impl Witness {
    pub fn states(&self) -> (State, State) {
        (
            State::new(self.t, self.x1, self.y1, self.z1, self.v),
            State::new(self.t, self.x2, self.y2, self.z2, self.v),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityVerdict {
    pub passes: bool,
    /// Largest `C` consistent with every sampled pair (non-positive when no `C > 0` works).
    pub best_constant: f64,
    pub witness: Option<Witness>,
}

/// Outcome of the sampled monotonicity check at level `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub constant: f64,
    pub drift_pair: InequalityVerdict,
    pub diffusion: InequalityVerdict,
}

fn probe_pairs(domain: &DomainBox, samples: usize, seed: u64) -> Vec<(State, State)> {
    // Axis probes come first so that single-coordinate witnesses are found deterministically.
    let c = domain.center();
    let mut pairs = Vec::with_capacity(samples + 3);
    for k in 0..3 {
        let mut s = c;
        match k {
            0 => s.x += 1.0,
            1 => s.y += 1.0,
            _ => s.z += 1.0,
        }
        pairs.push((s, c));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let a = domain.sample(&mut rng);
        let mut b = domain.sample(&mut rng);
        b.t = a.t;
        b.v = a.v;
        pairs.push((a, b));
    }
    pairs
}

fn verdict(values: &[(State, State, f64, f64)], constant: f64) -> InequalityVerdict {
    let mut best = f64::INFINITY;
    let mut witness = None;
    for &(a, b, value, norm2) in values {
        if norm2 > 0.0 {
            best = best.min(-value / norm2);
        }
        let bound = -constant * norm2;
        if witness.is_none() && value - bound > WITNESS_TOL {
            witness = Some(Witness {
                t: a.t,
                v: a.v,
                x1: a.x,
                x2: b.x,
                y1: a.y,
                y2: b.y,
                z1: a.z,
                z2: b.z,
                value,
                bound,
            });
        }
    }
    InequalityVerdict {
        passes: witness.is_none(),
        best_constant: best,
        witness,
    }
}

/// Samples pair differences over the box (plus coordinate-axis probes at the
/// center) and tests both monotonicity inequalities at level `constant`.
pub fn check_monotonicity(
    coeffs: &CoefficientSet,
    constant: f64,
    domain: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    if !(constant > 0.0) {
        return Err(Error::param(
            "C",
            format!("monotonicity constant must be positive, got {constant}"),
        ));
    }
    domain.validate()?;
    let pairs = probe_pairs(domain, samples, seed);
    let (drift, diffusion): (Vec<_>, Vec<_>) = pairs
        .par_iter()
        .map(|(a, b)| {
            let dx2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
            let dz2 = dx2 + (a.z - b.z).powi(2);
            (
                (*a, *b, drift_pair_value(coeffs, a, b), dx2),
                (*a, *b, diffusion_value(coeffs, a, b), dz2),
            )
        })
        .unzip();
    Ok(MonotonicityReport {
        constant,
        drift_pair: verdict(&drift, constant),
        diffusion: verdict(&diffusion, constant),
    })
}

/// Quadratic forms of the gradient monotonicity conditions at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientVerdict {
    /// `xi2 grad b . (xi1, xi2) - xi1 grad f . (xi1, xi2)`.
    pub drift_value: f64,
    pub drift_bound: f64,
    pub drift_passes: bool,
    /// `xi3 grad sigma . xi + xi2 grad delta . xi - xi1 grad h_dl . xi`.
    pub diffusion_value: f64,
    pub diffusion_bound: f64,
    pub diffusion_passes: bool,
}

pub fn check_gradient_monotonicity(
    coeffs: &CoefficientSet,
    point: &State,
    xi: [f64; 3],
    constant: f64,
) -> Result<GradientVerdict> {
    let [a, b, c] = xi;
    let gb = coeffs.drift.try_gradient(point)?;
    let gf = coeffs.driver.try_gradient(point)?;
    let gs = coeffs.diffusion.try_gradient(point)?;
    let gd = CoefficientSet::grad_opt(&coeffs.dl_drift, point)?;
    let gh = CoefficientSet::grad_opt(&coeffs.dl_driver, point)?;
    let drift_value = b * (gb.x * a + gb.y * b) - a * (gf.x * a + gf.y * b);
    let dot = |g: &super::Gradient| g.x * a + g.y * b + g.z * c;
    let diffusion_value = c * dot(&gs) + b * dot(&gd) - a * dot(&gh);
    let drift_bound = -constant * (a * a + b * b);
    let diffusion_bound = -constant * (a * a + b * b + c * c);
    Ok(GradientVerdict {
        drift_value,
        drift_bound,
        drift_passes: drift_value <= drift_bound + WITNESS_TOL,
        diffusion_value,
        diffusion_bound,
        diffusion_passes: diffusion_value <= diffusion_bound + WITNESS_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModelSpec;

    fn coupled() -> CoefficientSet {
        CoefficientSet::new(
            Coefficient::affine("b", 0.0, 0.0, -1.0, 0.0, 0.0),
            Coefficient::affine("sigma", 0.0, 0.0, 0.0, -1.0, 0.0),
            Coefficient::affine("f", 0.0, 1.0, 0.0, 0.0, 0.0),
            Coefficient::affine("phi", 0.0, 1.0, 0.0, 0.0, 0.0),
            0.0,
        )
    }

    #[test]
    fn linear_lipschitz_constants() {
        let b = Coefficient::affine("b", 0.0, 2.0, 0.0, 0.0, 0.0);
        let est = lipschitz_estimate(&b, &DomainBox::symmetric(1.0, 1.0), 1000, 1).unwrap();
        assert!((2.0 - 1e-6..=2.0 + 1e-12).contains(&est), "{est}");
        let phi = Coefficient::affine("phi", 0.0, 0.5, 0.0, 0.0, 0.0);
        let est = lipschitz_estimate(&phi, &DomainBox::symmetric(1.0, 1.0), 1000, 1).unwrap();
        assert!((est - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_small_samples() {
        assert!(check_lipschitz(&coupled(), &DomainBox::symmetric(1.0, 1.0), 10, 0).is_err());
    }

    #[test]
    fn non_finite_evaluation_names_the_point() {
        let c = Coefficient::new("inv", |s| 1.0 / s.x)
            .with_gradient(|s| super::super::Gradient::new(-1.0 / (s.x * s.x), 0.0, 0.0, 0.0));
        let mut domain = DomainBox::symmetric(1.0, 1.0);
        domain.x = [0.0, 0.0];
        let err = lipschitz_estimate(&c, &domain, 1000, 0).unwrap_err();
        assert!(matches!(err, Error::Coefficient { name: "inv", .. }));
    }

    #[test]
    fn coupled_model_is_monotone_with_unit_constant() {
        let report = check_monotonicity(&coupled(), 1.0, &DomainBox::symmetric(1.0, 1.0), 1000, 3).unwrap();
        assert!(report.drift_pair.passes);
        assert!((report.drift_pair.best_constant - 1.0).abs() < 1e-9);
        assert!(!report.diffusion.passes); // sigma = -z alone cannot control x, y
    }

    #[test]
    fn cash_model_verdicts() {
        let spec = LinearModelSpec::default();
        let c = spec.coefficients(1.0).unwrap();
        let level = spec.m2.min(spec.n1);
        let report = check_monotonicity(&c, level, &DomainBox::symmetric(1.0, 1.0), 2000, 7).unwrap();
        assert!(report.drift_pair.passes);
        let w = report.diffusion.witness.unwrap();
        assert_eq!((w.x1 - w.x2, w.y1 - w.y2, w.z1 - w.z2), (1.0, 0.0, 0.0));
        let (a, b) = w.states();
        assert!(diffusion_value(&c, &a, &b) - (-level) > WITNESS_TOL);
        // Every C > 0 is violated at the witness.
        for level in [1e-6, 1e-3, 1.0] {
            let r = check_monotonicity(&c, level, &DomainBox::symmetric(1.0, 1.0), 10, 7).unwrap();
            assert!(!r.diffusion.passes);
        }
    }

    #[test]
    fn gradient_form_on_cash_drift() {
        let spec = LinearModelSpec::default();
        let c = spec.coefficients(1.0).unwrap();
        let v = check_gradient_monotonicity(&c, &State::new(0.3, 0.2, -0.5, 0.0, 1.0), [1.0, 1.0, 0.0], 0.25).unwrap();
        assert!((v.drift_value - (-spec.n1 - spec.m2)).abs() < 1e-15);
        assert!(v.drift_passes);
        let tight = (spec.n1 + spec.m2) / 2.0;
        assert!(
            check_gradient_monotonicity(&c, &State::default(), [1.0, 1.0, 0.0], tight)
                .unwrap()
                .drift_passes
        );
        assert!(
            !check_gradient_monotonicity(&c, &State::default(), [1.0, 1.0, 0.0], tight + 1e-6)
                .unwrap()
                .drift_passes
        );
        let zero = check_gradient_monotonicity(&c, &State::default(), [0.0; 3], 5.0).unwrap();
        assert!(zero.drift_passes && zero.diffusion_passes);
    }
}
