use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Default central finite-difference step for coefficients without analytic gradients.
pub const FD_STEP: f64 = 1e-6;

/// Arguments of a coefficient evaluation.
///
/// `path` and `node` locate the evaluation inside an ensemble; coefficients that
/// are frozen along a base trajectory (adjoint and variational systems) use them
/// to look up their data. `t` is clock time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct State {
    pub path: usize,
    pub node: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v: f64,
}

impl State {
    pub fn new(t: f64, x: f64, y: f64, z: f64, v: f64) -> Self {
        Self {
            path: 0,
            node: 0,
            t,
            x,
            y,
            z,
            v,
        }
    }

    pub fn at(mut self, path: usize, node: usize) -> Self {
        self.path = path;
        self.node = node;
        self
    }
}

/// First partial derivatives with respect to `(x, y, z, v)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gradient {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub v: f64,
}

impl Gradient {
    pub fn new(x: f64, y: f64, z: f64, v: f64) -> Self {
        Self { x, y, z, v }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs()).max(self.v.abs())
    }
}

type ValueFn = dyn Fn(&State) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&State) -> Gradient + Send + Sync;

/// A scalar coefficient with an optional analytic gradient.
#[derive(Clone)]
pub struct Coefficient {
    name: &'static str,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl Coefficient {
    pub fn new(name: &'static str, value: impl Fn(&State) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name,
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn zero(name: &'static str) -> Self {
        Self::new(name, |_| 0.0).with_gradient(|_| Gradient::default())
    }

    /// `c0 + cx x + cy y + cz z + cv v`, with its exact gradient.
    pub fn affine(name: &'static str, c0: f64, cx: f64, cy: f64, cz: f64, cv: f64) -> Self {
        Self::new(name, move |s| c0 + cx * s.x + cy * s.y + cz * s.z + cv * s.v)
            .with_gradient(move |_| Gradient::new(cx, cy, cz, cv))
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&State) -> Gradient + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Drops the analytic gradient so that finite differences are used.
    pub fn without_gradient(mut self) -> Self {
        self.gradient = None;
        self
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn eval(&self, s: &State) -> f64 {
        (self.value)(s)
    }

    /// Evaluation that rejects non-finite output.
    pub fn try_eval(&self, s: &State) -> Result<f64> {
        let v = self.eval(s);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.error_at(s))
        }
    }

    pub(crate) fn error_at(&self, s: &State) -> Error {
        Error::Coefficient {
            name: self.name,
            t: s.t,
            x: s.x,
            y: s.y,
            z: s.z,
            v: s.v,
        }
    }

    /// Analytic gradient when available, central differences otherwise.
    pub fn gradient(&self, s: &State) -> Gradient {
        match &self.gradient {
            Some(g) => g(s),
            None => self.fd_gradient(s, FD_STEP),
        }
    }

    pub fn try_gradient(&self, s: &State) -> Result<Gradient> {
        let g = self.gradient(s);
        if [g.x, g.y, g.z, g.v].iter().all(|c| c.is_finite()) {
            Ok(g)
        } else {
            Err(self.error_at(s))
        }
    }

    /// Central finite differences with step `h` in every argument.
    pub fn fd_gradient(&self, s: &State, h: f64) -> Gradient {
        let d = |bump: &dyn Fn(&mut State, f64)| {
            let mut up = *s;
            let mut down = *s;
            bump(&mut up, h);
            bump(&mut down, -h);
            (self.eval(&up) - self.eval(&down)) / (2.0 * h)
        };
        Gradient {
            x: d(&|s, e| s.x += e),
            y: d(&|s, e| s.y += e),
            z: d(&|s, e| s.z += e),
            v: d(&|s, e| s.v += e),
        }
    }
}

/// Initial value of the forward component, constant or path-dependent.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialValue {
    Constant(f64),
    PerPath(Arc<Vec<f64>>),
}

impl InitialValue {
    pub fn value(&self, path: usize) -> f64 {
        match self {
            InitialValue::Constant(v) => *v,
            InitialValue::PerPath(v) => v[path],
        }
    }
}

type FeatureFn = dyn Fn(usize, usize) -> f64 + Send + Sync;

/// An additional Markov-state variable offered to the regression basis,
/// indexed by `(path, node)`.
#[derive(Clone)]
pub struct Feature(Arc<FeatureFn>);

impl Feature {
    pub fn new(f: impl Fn(usize, usize) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn eval(&self, path: usize, node: usize) -> f64 {
        (self.0)(path, node)
    }
}

impl fmt::Debug for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Feature")
    }
}

/// Coefficients and costs of a controlled forward-backward system
///
/// ```text
/// dx  = b(t,x,y,v) dt + delta(t,x,y,z) dL + sigma(t,x,y,z) dB_L,   x(0) = x0
/// -dy = f(t,x,y,v) dt + h_dl(t,x,y,z) dL - z dB_L,                  y(T) = phi(x(T))
/// J   = E[ int g(t,x,y,v) dt + h_T(x(T)) + gamma(y(0)) ]
/// ```
///
/// Terminal maps read `x`, initial maps read `y`; the other arguments are ignored.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub driver: Coefficient,
    pub terminal: Coefficient,
    pub dl_drift: Option<Coefficient>,
    pub dl_driver: Option<Coefficient>,
    pub running_cost: Option<Coefficient>,
    pub terminal_cost: Option<Coefficient>,
    pub initial_cost: Option<Coefficient>,
    pub x0: InitialValue,
    pub feature: Option<Feature>,
}

impl CoefficientSet {
    /// A system with the given core coefficients and no costs.
    pub fn new(
        drift: Coefficient,
        diffusion: Coefficient,
        driver: Coefficient,
        terminal: Coefficient,
        x0: f64,
    ) -> Self {
        Self {
            drift,
            diffusion,
            driver,
            terminal,
            dl_drift: None,
            dl_driver: None,
            running_cost: None,
            terminal_cost: None,
            initial_cost: None,
            x0: InitialValue::Constant(x0),
            feature: None,
        }
    }

    pub fn with_costs(mut self, running: Coefficient, terminal: Coefficient, initial: Coefficient) -> Self {
        self.running_cost = Some(running);
        self.terminal_cost = Some(terminal);
        self.initial_cost = Some(initial);
        self
    }

    pub fn with_dl_terms(mut self, dl_drift: Option<Coefficient>, dl_driver: Option<Coefficient>) -> Self {
        self.dl_drift = dl_drift;
        self.dl_driver = dl_driver;
        self
    }

    pub fn with_feature(mut self, feature: Feature) -> Self {
        self.feature = Some(feature);
        self
    }

    /// Every coefficient that is present, in a fixed order.
    pub fn all(&self) -> Vec<&Coefficient> {
        let mut out = vec![&self.drift, &self.diffusion, &self.driver, &self.terminal];
        for c in [
            &self.dl_drift,
            &self.dl_driver,
            &self.running_cost,
            &self.terminal_cost,
            &self.initial_cost,
        ]
        .into_iter()
        .flatten()
        {
            out.push(c);
        }
        out
    }

    pub(crate) fn eval_opt(c: &Option<Coefficient>, s: &State) -> Result<f64> {
        match c {
            Some(c) => c.try_eval(s),
            None => Ok(0.0),
        }
    }

    pub(crate) fn grad_opt(c: &Option<Coefficient>, s: &State) -> Result<Gradient> {
        match c {
            Some(c) => c.try_gradient(s),
            None => Ok(Gradient::default()),
        }
    }

    /// Largest relative disagreement between analytic gradients and central
    /// differences over the given points.
    pub fn gradient_consistency(&self, points: &[State]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in self.all() {
            if !c.has_analytic_gradient() {
                continue;
            }
            for s in points {
                let a = c.gradient(s);
                let n = c.fd_gradient(s, FD_STEP);
                for (p, q) in [(a.x, n.x), (a.y, n.y), (a.z, n.z), (a.v, n.v)] {
                    worst = worst.max((p - q).abs() / p.abs().max(q.abs()).max(1.0));
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_gradient_matches_differences() {
        let c = Coefficient::affine("b", 0.5, -0.1, -0.3, 0.0, 0.5);
        let s = State::new(0.2, 1.0, -2.0, 0.3, 0.7);
        assert_eq!(c.eval(&s), 0.5 - 0.1 + 0.6 + 0.35);
        let fd = c.clone().without_gradient().gradient(&s);
        assert!((fd.x + 0.1).abs() < 1e-9 && (fd.y + 0.3).abs() < 1e-9 && (fd.v - 0.5).abs() < 1e-9);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let c = Coefficient::new("log", |s| s.x.ln());
        let err = c.try_eval(&State::new(0.0, -1.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Coefficient { name: "log", x, .. } if x == -1.0));
    }

    #[test]
    fn finite_differences_are_second_order() {
        let c = Coefficient::new("smooth", |s| (s.x).sin() * s.y.exp());
        let s = State::new(0.0, 0.7, 0.2, 0.0, 0.0);
        let exact = 0.7f64.cos() * 0.2f64.exp();
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&h| (c.fd_gradient(&s, h).x - exact).abs())
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order}");
        }
    }
}
