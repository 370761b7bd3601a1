use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::linear::interpolate;
use crate::subordination::TimeGrid;

/// Window edges are compared with this absolute slack so that grid nodes
/// computed as `T * i / N` land on the intended side.
pub const WINDOW_TOL: f64 = 1e-9;

/// Admissible control values `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ControlDomain {
    Real,
    Interval { lo: f64, hi: f64 },
    Finite { values: Vec<f64> },
}

impl ControlDomain {
    pub fn contains(&self, v: f64) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            ControlDomain::Real => v.is_finite(),
            ControlDomain::Interval { lo, hi } => v >= lo - TOL && v <= hi + TOL,
            ControlDomain::Finite { values } => values.iter().any(|u| (u - v).abs() <= TOL),
        }
    }

    /// Nearest admissible value.
    pub fn clip(&self, v: f64) -> f64 {
        match self {
            ControlDomain::Real => v,
            ControlDomain::Interval { lo, hi } => v.clamp(*lo, *hi),
            ControlDomain::Finite { values } => values
                .iter()
                .copied()
                .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                .unwrap_or(v),
        }
    }
}

type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;
type FeedbackFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Repr {
    Deterministic(Arc<TimeFn>),
    /// `v(t, x, R)`.
    Feedback(Arc<FeedbackFn>),
    Tabulated {
        times: Arc<Vec<f64>>,
        values: Arc<Vec<f64>>,
    },
    /// Values indexed by `[path][node]`.
    PerPath(Arc<Vec<Vec<f64>>>),
    Spike {
        base: Box<ControlProcess>,
        donor: Box<ControlProcess>,
        start: f64,
        width: f64,
    },
    Offset {
        base: Box<ControlProcess>,
        offset: f64,
    },
}

/// An admissible control evaluated at grid nodes of an ensemble.
#[derive(Clone)]
pub struct ControlProcess {
    repr: Repr,
    domain: ControlDomain,
}

impl fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Deterministic(_) => "deterministic".to_string(),
            Repr::Feedback(_) => "feedback".to_string(),
            Repr::Tabulated { times, .. } => format!("tabulated({} knots)", times.len()),
            Repr::PerPath(v) => format!("per-path({} paths)", v.len()),
            Repr::Spike { start, width, .. } => format!("spike[{start}, {})", start + width),
            Repr::Offset { offset, .. } => format!("offset({offset})"),
        };
        f.debug_struct("ControlProcess")
            .field("kind", &kind)
            .field("domain", &self.domain)
            .finish()
    }
}

impl ControlProcess {
    pub fn deterministic(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            repr: Repr::Deterministic(Arc::new(f)),
            domain: ControlDomain::Real,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::deterministic(move |_| c)
    }

    pub fn feedback(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            repr: Repr::Feedback(Arc::new(f)),
            domain: ControlDomain::Real,
        }
    }

    /// Piecewise-linear in time through `(times[k], values[k])`.
    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "tabulated control needs increasing times matching the values".into(),
            ));
        }
        Ok(Self {
            repr: Repr::Tabulated {
                times: Arc::new(times),
                values: Arc::new(values),
            },
            domain: ControlDomain::Real,
        })
    }

    pub fn on_grid(grid: &TimeGrid, values: Vec<f64>) -> Result<Self> {
        Self::tabulated(grid.nodes().to_vec(), values)
    }

    pub fn per_path(values: Vec<Vec<f64>>) -> Self {
        Self {
            repr: Repr::PerPath(Arc::new(values)),
            domain: ControlDomain::Real,
        }
    }

    pub fn with_domain(mut self, domain: ControlDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn domain(&self) -> &ControlDomain {
        &self.domain
    }

    /// `self + offset` clipped to the domain.
    pub fn offset(&self, offset: f64) -> Self {
        Self {
            repr: Repr::Offset {
                base: Box::new(self.clone()),
                offset,
            },
            domain: self.domain.clone(),
        }
    }

    /// Spike variation: `donor` on `[start, start + width)`, `self` elsewhere.
    pub fn spike(&self, donor: &ControlProcess, start: f64, width: f64, horizon: f64) -> Result<Self> {
        if !(start >= 0.0 && width >= 0.0 && start + width <= horizon + WINDOW_TOL) {
            return Err(Error::Domain(format!(
                "spike window [{start}, {}) is not inside [0, {horizon}]",
                start + width
            )));
        }
        Ok(Self {
            repr: Repr::Spike {
                base: Box::new(self.clone()),
                donor: Box::new(donor.clone()),
                start,
                width,
            },
            domain: self.domain.clone(),
        })
    }

    /// Whether `t` lies in `[start, start + width)` up to [`WINDOW_TOL`].
    pub fn in_window(t: f64, start: f64, width: f64) -> bool {
        width > 0.0 && t >= start - WINDOW_TOL && t < start + width - WINDOW_TOL
    }

    /// Value for `path` at `node` (clock time `t`) given the state `x` and overshoot `r`.
    pub fn value(&self, path: usize, node: usize, t: f64, x: f64, r: f64) -> f64 {
        match &self.repr {
            Repr::Deterministic(f) => f(t),
            Repr::Feedback(f) => f(t, x, r),
            Repr::Tabulated { times, values } => interpolate(times, values, t),
            Repr::PerPath(v) => v[path][node],
            Repr::Spike {
                base,
                donor,
                start,
                width,
            } => {
                if Self::in_window(t, *start, *width) {
                    donor.value(path, node, t, x, r)
                } else {
                    base.value(path, node, t, x, r)
                }
            }
            Repr::Offset { base, offset } => self.domain.clip(base.value(path, node, t, x, r) + offset),
        }
    }

    /// Value that must lie in the domain.
    pub fn admissible_value(&self, path: usize, node: usize, t: f64, x: f64, r: f64) -> Result<f64> {
        let v = self.value(path, node, t, x, r);
        if self.domain.contains(v) {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "control value {v} at t={t} (path {path}) is outside {:?}",
                self.domain
            )))
        }
    }

    /// Deterministic controls ignore path and state.
    pub fn is_deterministic(&self) -> bool {
        match &self.repr {
            Repr::Deterministic(_) | Repr::Tabulated { .. } => true,
            Repr::Feedback(_) | Repr::PerPath(_) => false,
            Repr::Spike { base, donor, .. } => base.is_deterministic() && donor.is_deterministic(),
            Repr::Offset { base, .. } => base.is_deterministic(),
        }
    }

    /// Node values of a deterministic control.
    pub fn deterministic_values(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        if !self.is_deterministic() {
            return Err(Error::Domain("control depends on the path or the state".into()));
        }
        Ok(grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &t)| self.value(0, i, t, 0.0, 0.0))
            .collect())
    }
}
