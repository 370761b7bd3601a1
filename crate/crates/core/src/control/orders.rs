use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use super::adjoint::{solve_adjoint, AdjointSolution, FrozenGradients};
use super::variational::{
    duality_check, solve_variational_with, spike_perturb, variational_inequality_lhs, DualityCheck, VariationalSolution,
};
use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::solver::stats::linear_fit;
use crate::solver::{solve_fbsde, trapezoid, ControlProcess, Estimate, FbsdeSolution, SolverOptions};
use crate::subordination::Ensemble;

/// A point is censored when its value is within this many standard errors of zero.
pub const CENSOR_SE: f64 = 2.0;

/// Solver resolution is taken as this multiple of the Picard tolerance.
pub const RESOLUTION_FACTOR: f64 = 10.0;

/// Growth class of a measured quantity in the window width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderClass {
    /// Second moments of the first-order response: `C eps^{3/2}`, which implies the coarser `C eps`.
    SecondMoment,
    /// Fourth moments of the first-order response: `C eps^3`.
    FourthMoment,
    /// Linearization remainders: `o(eps^2)`.
    Remainder,
}

/// Slope implied by the coarse `C eps` bound on second moments.
pub const FIRST_ORDER_SLOPE: f64 = 0.9;

impl OrderClass {
    pub fn required_slope(self) -> f64 {
        match self {
            OrderClass::SecondMoment => 1.4,
            OrderClass::FourthMoment => 2.7,
            OrderClass::Remainder => 1.9,
        }
    }
}

/// The measured quantities, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    IntX1Sq,
    IntY1Sq,
    IntZ1SqDl,
    SupX1Sq,
    SupY1Sq,
    SupX1Quartic,
    SupY1Quartic,
    RemainderXSupSq,
    RemainderYSupSq,
    RemainderZIntSqDl,
}

impl Quantity {
    pub const ALL: [Quantity; 10] = [
        Quantity::IntX1Sq,
        Quantity::IntY1Sq,
        Quantity::IntZ1SqDl,
        Quantity::SupX1Sq,
        Quantity::SupY1Sq,
        Quantity::SupX1Quartic,
        Quantity::SupY1Quartic,
        Quantity::RemainderXSupSq,
        Quantity::RemainderYSupSq,
        Quantity::RemainderZIntSqDl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::IntX1Sq => "int_x1_sq",
            Quantity::IntY1Sq => "int_y1_sq",
            Quantity::IntZ1SqDl => "int_z1_sq_dl",
            Quantity::SupX1Sq => "sup_x1_sq",
            Quantity::SupY1Sq => "sup_y1_sq",
            Quantity::SupX1Quartic => "sup_x1_quartic",
            Quantity::SupY1Quartic => "sup_y1_quartic",
            Quantity::RemainderXSupSq => "remainder_x_sup_sq",
            Quantity::RemainderYSupSq => "remainder_y_sup_sq",
            Quantity::RemainderZIntSqDl => "remainder_z_int_sq_dl",
        }
    }

    pub fn class(self) -> OrderClass {
        match self {
            Quantity::IntX1Sq | Quantity::IntY1Sq | Quantity::IntZ1SqDl | Quantity::SupX1Sq | Quantity::SupY1Sq => {
                OrderClass::SecondMoment
            }
            Quantity::SupX1Quartic | Quantity::SupY1Quartic => OrderClass::FourthMoment,
            Quantity::RemainderXSupSq | Quantity::RemainderYSupSq | Quantity::RemainderZIntSqDl => {
                OrderClass::Remainder
            }
        }
    }

    /// Power of the state in the quantity, used to scale the solver resolution.
    fn power(self) -> i32 {
        if self.class() == OrderClass::FourthMoment {
            4
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurement {
    pub epsilon: f64,
    pub value: f64,
    pub se: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Pass,
    Fail,
    /// Fewer than two uncensored points.
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub quantity: Quantity,
    pub class: OrderClass,
    pub required: f64,
    pub points: Vec<Measurement>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub status: FitStatus,
}

/// Everything measured for one window width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikePoint {
    pub epsilon: f64,
    pub inequality_lhs: Estimate,
    pub duality: DualityCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeReport {
    pub start: f64,
    pub widths: Vec<f64>,
    pub donor: String,
    pub points: Vec<SpikePoint>,
    pub fits: Vec<OrderFit>,
    /// Standard errors allowed in the duality comparison.
    pub duality_k: f64,
    pub duality_agrees: bool,
}

impl SpikeReport {
    pub fn fit(&self, q: Quantity) -> &OrderFit {
        self.fits
            .iter()
            .find(|f| f.quantity == q)
            .expect("every quantity is fitted")
    }

    /// No fitted quantity falls short of its required slope.
    pub fn orders_hold(&self) -> bool {
        self.fits.iter().all(|f| f.status != FitStatus::Fail)
    }

    /// Slope table with columns `quantity, epsilon, value, slope, r2`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "epsilon", "value", "slope", "r2"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for f in &self.fits {
            for p in &f.points {
                w.write_record([
                    f.quantity.name().to_string(),
                    format!("{}", p.epsilon),
                    format!("{:.12e}", p.value),
                    opt(f.slope),
                    opt(f.r2),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeOptions {
    /// Window start `tau`.
    pub start: f64,
    /// Window widths `eps`.
    pub widths: Vec<f64>,
    pub duality_k: f64,
}

impl SpikeOptions {
    /// `tau = 0.4 T` and `eps` in `{0.02, 0.04, 0.08, 0.16}`.
    pub fn for_horizon(horizon: f64) -> Self {
        Self {
            start: 0.4 * horizon,
            widths: vec![0.02, 0.04, 0.08, 0.16],
            duality_k: 3.0,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.widths.len() < 4 {
            return Err(Error::param(
                "widths",
                "the spike experiment needs at least four window widths",
            ));
        }
        if self.widths.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::param("widths", "window widths must be positive"));
        }
        let lo = self.widths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.widths.iter().copied().fold(0.0, f64::max);
        if hi / lo < 8.0 - 1e-12 {
            return Err(Error::param(
                "widths",
                format!("window widths span [{lo}, {hi}]; at least a factor of 8 is needed for a slope fit"),
            ));
        }
        if self.start < 0.0 || self.start + hi > horizon + crate::solver::control::WINDOW_TOL {
            return Err(Error::Domain(format!(
                "spike windows [{}, {}) leave [0, {horizon}]",
                self.start,
                self.start + hi
            )));
        }
        Ok(())
    }
}

/// Ensemble estimates of every [`Quantity`] for one width, in [`Quantity::ALL`] order.
fn measure(
    base: &FbsdeSolution,
    pert: &FbsdeSolution,
    var: &VariationalSolution,
    ensemble: &Ensemble,
) -> Vec<Estimate> {
    let n = base.grid.steps();
    let paths = base.paths();
    let dl = |m: usize, i: usize| ensemble.paths()[m].dl[i];

    let integral = |sq: &dyn Fn(usize, usize) -> f64| -> Estimate {
        let v: Vec<f64> = (0..paths)
            .map(|m| trapezoid(&base.grid, &(0..=n).map(|i| sq(m, i)).collect::<Vec<_>>()))
            .collect();
        base.estimate(&v)
    };
    let dl_sum = |sq: &dyn Fn(usize, usize) -> f64| -> Estimate {
        let v: Vec<f64> = (0..paths).map(|m| (0..n).map(|i| sq(m, i) * dl(m, i)).sum()).collect();
        base.estimate(&v)
    };
    let sup = |sq: &dyn Fn(usize, usize) -> f64| -> Estimate {
        (0..=n)
            .map(|i| base.estimate(&(0..paths).map(|m| sq(m, i)).collect::<Vec<_>>()))
            .fold(
                Estimate { mean: 0.0, se: 0.0 },
                |a, b| if b.mean > a.mean { b } else { a },
            )
    };

    let x1 = var.x1();
    let y1 = var.y1();
    let z1 = var.z1();
    let rx = |m: usize, i: usize| (pert.x[m][i] - base.x[m][i] - x1[m][i]).powi(2);
    let ry = |m: usize, i: usize| (pert.y[m][i] - base.y[m][i] - y1[m][i]).powi(2);
    let rz = |m: usize, i: usize| (pert.z[m][i] - base.z[m][i] - z1[m][i]).powi(2);

    Quantity::ALL
        .iter()
        .map(|q| match q {
            Quantity::IntX1Sq => integral(&|m, i| x1[m][i].powi(2)),
            Quantity::IntY1Sq => integral(&|m, i| y1[m][i].powi(2)),
            Quantity::IntZ1SqDl => dl_sum(&|m, i| z1[m][i].powi(2)),
            Quantity::SupX1Sq => sup(&|m, i| x1[m][i].powi(2)),
            Quantity::SupY1Sq => sup(&|m, i| y1[m][i].powi(2)),
            Quantity::SupX1Quartic => sup(&|m, i| x1[m][i].powi(4)),
            Quantity::SupY1Quartic => sup(&|m, i| y1[m][i].powi(4)),
            Quantity::RemainderXSupSq => sup(&rx),
            Quantity::RemainderYSupSq => sup(&ry),
            Quantity::RemainderZIntSqDl => dl_sum(&rz),
        })
        .collect()
}

/// Fits `log value` against `log eps` over the uncensored points.
fn fit(quantity: Quantity, points: Vec<Measurement>) -> OrderFit {
    let used: Vec<&Measurement> = points.iter().filter(|p| !p.censored).collect();
    let class = quantity.class();
    let required = class.required_slope();
    let (slope, r2, status) = if used.len() >= 2 {
        let xs: Vec<f64> = used.iter().map(|p| p.epsilon.ln()).collect();
        let ys: Vec<f64> = used.iter().map(|p| p.value.ln()).collect();
        let (s, r2) = linear_fit(&xs, &ys);
        let status = if s >= required {
            FitStatus::Pass
        } else {
            FitStatus::Fail
        };
        (Some(s), Some(r2), status)
    } else {
        (None, None, FitStatus::Censored)
    };
    OrderFit {
        quantity,
        class,
        required,
        points,
        slope,
        r2,
        status,
    }
}

/// Spike-variation experiment: for each width `eps`, solves the system under
/// `u` and under the spike `u^eps` on common random numbers, solves the
/// variational equation, and measures the growth of the first-order response
/// and of the linearization remainders.
///
/// `donor` defaults to `u + 1` clipped to the control domain. The duality
/// pairing uses `adjoint` when given and a Monte Carlo adjoint otherwise.
pub fn estimate_orders(
    coeffs: &CoefficientSet,
    u: &ControlProcess,
    donor: Option<&ControlProcess>,
    ensemble: &Ensemble,
    solver: &SolverOptions,
    spike: &SpikeOptions,
    adjoint: Option<&AdjointSolution>,
) -> Result<SpikeReport> {
    let horizon = ensemble.grid().horizon();
    spike.validate(horizon)?;
    let donor = donor.cloned().unwrap_or_else(|| u.offset(1.0));

    let base = solve_fbsde(coeffs, u, ensemble, solver)?;
    let gradients = Arc::new(FrozenGradients::along(coeffs, &base)?);
    let adjoint = match adjoint {
        Some(a) => a.clone(),
        None => solve_adjoint(coeffs, &base, ensemble, solver)?,
    };

    let resolution = RESOLUTION_FACTOR * solver.tol;
    let mut measured: Vec<Vec<Measurement>> = vec![Vec::new(); Quantity::ALL.len()];
    let mut points = Vec::with_capacity(spike.widths.len());
    for &eps in &spike.widths {
        let ue = spike_perturb(u, &donor, spike.start, eps, horizon)?;
        let pert = solve_fbsde(coeffs, &ue, ensemble, solver)?;
        let var = solve_variational_with(coeffs, &base, Arc::clone(&gradients), &ue, ensemble, solver)?;
        let estimates = measure(&base, &pert, &var, ensemble);
        for (k, (q, e)) in Quantity::ALL.iter().zip(&estimates).enumerate() {
            let floor = resolution.powi(q.power());
            measured[k].push(Measurement {
                epsilon: eps,
                value: e.mean,
                se: e.se,
                censored: !(e.mean > floor && e.mean > CENSOR_SE * e.se),
            });
        }
        points.push(SpikePoint {
            epsilon: eps,
            inequality_lhs: variational_inequality_lhs(&var, &base),
            duality: duality_check(&var, &base, &adjoint)?,
        });
    }

    let fits: Vec<OrderFit> = Quantity::ALL.iter().zip(measured).map(|(&q, p)| fit(q, p)).collect();
    let duality_agrees = points.iter().all(|p| p.duality.agrees(spike.duality_k));
    Ok(SpikeReport {
        start: spike.start,
        widths: spike.widths.clone(),
        donor: format!("{donor:?}"),
        points,
        fits,
        duality_k: spike.duality_k,
        duality_agrees,
    })
}
