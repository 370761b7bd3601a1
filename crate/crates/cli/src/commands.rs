//! The subcommands. Each returns the property checks that failed.

use std::sync::Arc;

use serde::Serialize;
use subdiff::casestudy::{
    cash_adjoint_oracle, first_order_residuals, optimal_cash_control, oracle_agreement, run_cash_study,
    write_adjoint_csv, write_means_csv, OptimalityReport, OracleAgreement,
};
use subdiff::constrained::{
    check_constrained_smp, ekeland_search, extract_multipliers, solve_constrained_adjoint, ConstrainedSmpReport,
    EkelandCertificate, MultiplierEstimate,
};
use subdiff::control::{
    check_smp, estimate_orders, eval_hamiltonian, probe_grid, solve_adjoint, spike_perturb, AdjointSolution, SmpReport,
    SpikeReport,
};
use subdiff::model::{check_gradient_monotonicity, check_lipschitz, check_monotonicity, DomainBox};
use subdiff::model::{GradientVerdict, MonotonicityReport, State};
use subdiff::solver::{expected_cost, solve_fbsde, Component, ControlProcess, Estimate, FbsdeSolution};
use subdiff::subordination::Ensemble;
use subdiff::{Error, Result};

use crate::artifacts::{file_label, Artifacts};
use crate::config::{AdjointSource, ControlKind, RunConfig};

const CASH_MODEL: &str = "cash-management";

/// Standard errors allowed when comparing ensemble means with oracle values.
const ORACLE_K: f64 = 3.0;

/// Tolerance of the exact Hamiltonian margin on oracle values.
const MARGIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Simulate clock, overshoot and time-changed Brownian paths.
    SimulatePaths,
    /// Sampled monotonicity, gradient and Lipschitz checks of the model.
    CheckAssumptions,
    /// Solve the forward-backward system under the configured control.
    SolveFbsde,
    /// Solve the adjoint system along the trajectory of the configured control.
    SolveAdjoint,
    /// Check Hamiltonian minimality of the configured control.
    CheckSmp,
    /// Spike-variation order estimates and the duality pairing.
    SpikeExperiment,
    /// Penalized selection, multipliers and the constrained maximum principle.
    ConstrainedDemo,
    /// Cash management study: oracle adjoint, optimal control, optimality gaps.
    CashDemo,
    /// Print the effective configuration and exit.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulatePaths => "simulate-paths",
            Command::CheckAssumptions => "check-assumptions",
            Command::SolveFbsde => "solve-fbsde",
            Command::SolveAdjoint => "solve-adjoint",
            Command::CheckSmp => "check-smp",
            Command::SpikeExperiment => "spike-experiment",
            Command::ConstrainedDemo => "constrained-demo",
            Command::CashDemo => "cash-demo",
            Command::Validate => "validate",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    out.json("config.json", &cfg.reproducible())?;
    match command {
        Command::SimulatePaths => simulate_paths(cfg, out),
        Command::CheckAssumptions => check_assumptions(cfg, out),
        Command::SolveFbsde => solve_trajectory(cfg, out),
        Command::SolveAdjoint => solve_adjoint_cmd(cfg, out),
        Command::CheckSmp => check_smp_cmd(cfg, out),
        Command::SpikeExperiment => spike_experiment(cfg, out),
        Command::ConstrainedDemo => constrained_demo(cfg, out),
        Command::CashDemo => cash_demo(cfg, out),
        Command::Validate => Ok(Vec::new()),
    }
}

fn studied_control(cfg: &RunConfig, ensemble: &Ensemble) -> Result<ControlProcess> {
    let grid = ensemble.grid();
    let optimal = || -> Result<ControlProcess> {
        let oracle = cash_adjoint_oracle(&cfg.linear, grid)?;
        Ok(optimal_cash_control(&cfg.linear, grid, &oracle)?.with_domain(cfg.control_domain.clone()))
    };
    Ok(match &cfg.control {
        ControlKind::CashOptimal => optimal()?,
        ControlKind::OptimalOffset { offset } => optimal()?.offset(*offset),
        ControlKind::Target => {
            let l = cfg.linear.l.clone();
            ControlProcess::deterministic(move |t| l.at(t)).with_domain(cfg.control_domain.clone())
        }
        ControlKind::Constant { value } => ControlProcess::constant(*value).with_domain(cfg.control_domain.clone()),
        ControlKind::Tabulated { times, values } => {
            ControlProcess::tabulated(times.clone(), values.clone())?.with_domain(cfg.control_domain.clone())
        }
    })
}

fn uses_oracle(cfg: &RunConfig, source: AdjointSource) -> Result<bool> {
    match source {
        AdjointSource::Auto => Ok(cfg.model == CASH_MODEL),
        AdjointSource::MonteCarlo => Ok(false),
        AdjointSource::Oracle if cfg.model == CASH_MODEL => Ok(true),
        AdjointSource::Oracle => Err(Error::param(
            "adjoint",
            format!("the oracle adjoint exists only for `{CASH_MODEL}`"),
        )),
    }
}

fn oracle_adjoint(cfg: &RunConfig, ensemble: &Ensemble) -> Result<AdjointSolution> {
    let o = cash_adjoint_oracle(&cfg.linear, ensemble.grid())?;
    AdjointSolution::broadcast(Arc::clone(ensemble.shared_grid()), &o.p, &o.q, ensemble.len())
}

fn label(source_oracle: bool) -> &'static str {
    if source_oracle {
        "oracle"
    } else {
        "monte-carlo"
    }
}

#[derive(Serialize)]
struct ClockSummary {
    paths: usize,
    steps: usize,
    kappa: f64,
    /// Cells violating `0 <= dL <= dt / kappa`.
    violations: usize,
    /// Largest `kappa dL / dt` over all cells.
    max_scaled_rate: f64,
    mean_terminal_clock: f64,
}

fn simulate_paths(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let e = cfg.ensemble()?;
    out.csv("paths.csv", |w| e.write_csv(w))?;
    let kappa = e.kappa();
    let grid = e.grid();
    let mut violations = 0;
    let mut max_rate: f64 = 0.0;
    for p in e.paths() {
        for (i, &d) in p.dl.iter().enumerate() {
            let dt = grid.dt(i);
            if !(d >= 0.0 && d <= dt / kappa) {
                violations += 1;
            }
            max_rate = max_rate.max(kappa * d / dt);
        }
    }
    let n = grid.steps();
    let summary = ClockSummary {
        paths: e.len(),
        steps: n,
        kappa,
        violations,
        max_scaled_rate: max_rate,
        mean_terminal_clock: e.paths().iter().map(|p| p.l[n]).sum::<f64>() / e.len() as f64,
    };
    out.json("paths_summary.json", &summary)?;
    Ok(if violations > 0 {
        vec![format!("{violations} clock increments violate 0 <= dL <= dt/kappa")]
    } else {
        Vec::new()
    })
}

#[derive(Serialize)]
struct GradientProbe {
    direction: [f64; 3],
    verdict: GradientVerdict,
}

#[derive(Serialize)]
struct AssumptionsReport {
    model: String,
    domain: DomainBox,
    monotonicity: MonotonicityReport,
    /// Quadratic forms at the box center along the coordinate directions.
    gradient_probes: Vec<GradientProbe>,
    lipschitz: Vec<(&'static str, f64)>,
}

fn check_assumptions(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let a = &cfg.assumptions;
    let constant = a.constant.unwrap_or(cfg.linear.m2.min(cfg.linear.n1));
    let domain = DomainBox::symmetric(cfg.grid.horizon, a.radius);
    let monotonicity = check_monotonicity(&coeffs, constant, &domain, a.samples, a.seed)?;
    let center = State::new(0.5 * cfg.grid.horizon, 0.0, 0.0, 0.0, 0.0);
    let gradient_probes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .into_iter()
        .map(|d| {
            Ok(GradientProbe {
                direction: d,
                verdict: check_gradient_monotonicity(&coeffs, &center, d, constant)?,
            })
        })
        .collect::<Result<_>>()?;
    let lipschitz = check_lipschitz(&coeffs, &domain, a.samples, a.seed)?;
    out.json(
        "assumptions.json",
        &AssumptionsReport {
            model: cfg.model.clone(),
            domain,
            monotonicity,
            gradient_probes,
            lipschitz,
        },
    )?;
    // a failed assumption is a finding about the model, not a failed run
    Ok(Vec::new())
}

#[derive(Serialize)]
struct NodeSummary {
    t: f64,
    x: Estimate,
    y: Estimate,
    /// On the cell starting at this node.
    z: Option<Estimate>,
}

#[derive(Serialize)]
struct SolutionSummary {
    model: String,
    control: ControlKind,
    paths: usize,
    iterations: Vec<usize>,
    final_changes: Vec<f64>,
    cost: Estimate,
    nodes: Vec<NodeSummary>,
}

fn summarize(cfg: &RunConfig, coeffs: &subdiff::model::CoefficientSet, sol: &FbsdeSolution) -> Result<SolutionSummary> {
    let xs = sol.estimates(Component::X);
    let ys = sol.estimates(Component::Y);
    let zs = sol.estimates(Component::Z);
    Ok(SolutionSummary {
        model: cfg.model.clone(),
        control: cfg.control.clone(),
        paths: sol.paths(),
        iterations: sol.iterations.clone(),
        final_changes: sol.changes.iter().map(|c| c.last().copied().unwrap_or(0.0)).collect(),
        cost: expected_cost(coeffs, sol)?,
        nodes: sol
            .grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &t)| NodeSummary {
                t,
                x: xs[i],
                y: ys[i],
                z: zs.get(i).copied(),
            })
            .collect(),
    })
}

fn solve_trajectory(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let e = cfg.ensemble()?;
    let u = studied_control(cfg, &e)?;
    let sol = solve_fbsde(&coeffs, &u, &e, &cfg.solver)?;
    out.csv("trajectory.csv", |w| sol.write_csv(w))?;
    out.json("solution_summary.json", &summarize(cfg, &coeffs, &sol)?)?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct AdjointNode {
    t: f64,
    p: Estimate,
    q: Estimate,
    oracle_p: Option<f64>,
    oracle_q: Option<f64>,
}

#[derive(Serialize)]
struct AdjointSummary {
    model: String,
    control: ControlKind,
    iterations: Vec<usize>,
    nodes: Vec<AdjointNode>,
    oracle_p: Option<OracleAgreement>,
    oracle_q: Option<OracleAgreement>,
}

fn solve_adjoint_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let e = cfg.ensemble()?;
    let u = studied_control(cfg, &e)?;
    let traj = solve_fbsde(&coeffs, &u, &e, &cfg.solver)?;
    let adj = solve_adjoint(&coeffs, &traj, &e, &cfg.solver)?;
    let sol = adj.solution.as_ref().expect("Monte Carlo adjoint keeps its solution");
    let n = e.grid().steps();
    out.csv("adjoint.csv", |w| {
        use std::io::Write;
        writeln!(w, "path_id,t,p,q,k")?;
        for m in 0..adj.paths() {
            for (i, t) in e.grid().nodes().iter().enumerate() {
                let k = if i < n { adj.k[m][i].to_string() } else { String::new() };
                writeln!(w, "{m},{t},{},{},{k}", adj.p[m][i], adj.q[m][i])?;
            }
        }
        Ok(())
    })?;
    let ps = sol.estimates(Component::X);
    let qs = sol.estimates(Component::Y);
    let oracle = if cfg.model == CASH_MODEL {
        Some(cash_adjoint_oracle(&cfg.linear, e.grid())?)
    } else {
        None
    };
    let nodes = e
        .grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &t)| AdjointNode {
            t,
            p: ps[i],
            q: qs[i],
            oracle_p: oracle.as_ref().map(|o| o.p[i]),
            oracle_q: oracle.as_ref().map(|o| o.q[i]),
        })
        .collect();
    let (oracle_p, oracle_q) = match &oracle {
        Some(o) => (
            Some(oracle_agreement(&ps, &o.p, ORACLE_K)?),
            Some(oracle_agreement(&qs, &o.q, ORACLE_K)?),
        ),
        None => (None, None),
    };
    out.json(
        "adjoint_summary.json",
        &AdjointSummary {
            model: cfg.model.clone(),
            control: cfg.control.clone(),
            iterations: sol.iterations.clone(),
            nodes,
            oracle_p,
            oracle_q,
        },
    )?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct SmpOutput {
    control: ControlKind,
    adjoint: &'static str,
    probes: Vec<f64>,
    smp: SmpReport,
    /// `max |H(v) - H(u*) - (v - u*)^2 / 2|` over nodes and probes with oracle `(p, q)`;
    /// reported for the cash optimum only.
    exact_margin_error: Option<f64>,
}

fn check_smp_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let e = cfg.ensemble()?;
    let u = studied_control(cfg, &e)?;
    let traj = solve_fbsde(&coeffs, &u, &e, &cfg.solver)?;
    let oracle = uses_oracle(cfg, cfg.smp.adjoint)?;
    let adj = if oracle {
        oracle_adjoint(cfg, &e)?
    } else {
        solve_adjoint(&coeffs, &traj, &e, &cfg.solver)?
    };
    let probes = probe_grid(cfg.smp.lo, cfg.smp.hi, cfg.smp.count);
    let smp = check_smp(&coeffs, &traj, &adj, &probes, cfg.smp.tol)?;
    let exact_margin_error = if cfg.model == CASH_MODEL && cfg.control == ControlKind::CashOptimal {
        let o = cash_adjoint_oracle(&cfg.linear, e.grid())?;
        let mut worst: f64 = 0.0;
        for i in 0..=e.grid().steps() {
            let s = traj.state(0, i);
            let h_u = eval_hamiltonian(&coeffs, &s, o.p[i], o.q[i]);
            for &v in &probes {
                let h_v = eval_hamiltonian(&coeffs, &State { v, ..s }, o.p[i], o.q[i]);
                worst = worst.max((h_v - h_u - 0.5 * (v - s.v).powi(2)).abs());
            }
        }
        Some(worst)
    } else {
        None
    };
    let mut failures = Vec::new();
    if !smp.passes {
        failures.push(format!(
            "Hamiltonian minimality fails: min margin {:.3e} < -{:.1e}",
            smp.min_margin, smp.tol
        ));
    }
    if let Some(err) = exact_margin_error.filter(|&e| e > MARGIN_TOL) {
        failures.push(format!("exact margin off by {err:.3e}"));
    }
    out.json(
        "smp_report.json",
        &SmpOutput {
            control: cfg.control.clone(),
            adjoint: label(oracle),
            probes,
            smp,
            exact_margin_error,
        },
    )?;
    Ok(failures)
}

fn spike_experiment(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let e = cfg.ensemble()?;
    let u = studied_control(cfg, &e)?;
    let donor = u.offset(cfg.spike.donor_offset);
    let adjoint = if uses_oracle(cfg, cfg.spike.adjoint)? {
        Some(oracle_adjoint(cfg, &e)?)
    } else {
        None
    };
    let report = estimate_orders(
        &coeffs,
        &u,
        Some(&donor),
        &e,
        &cfg.solver,
        &cfg.spike_options(),
        adjoint.as_ref(),
    )?;
    out.json("spike_report.json", &report)?;
    out.csv("spike_slopes.csv", |w| report.write_csv(w))?;
    Ok(spike_failures(&report))
}

fn spike_failures(report: &SpikeReport) -> Vec<String> {
    if report.orders_hold() {
        return Vec::new();
    }
    report
        .fits
        .iter()
        .filter(|f| f.status == subdiff::control::FitStatus::Fail)
        .map(|f| {
            format!(
                "{} grows with slope {:.3} < {}",
                f.quantity.name(),
                f.slope.unwrap_or(f64::NAN),
                f.required
            )
        })
        .collect()
}

#[derive(Serialize)]
struct ConstrainedOutput {
    offsets: Vec<f64>,
    certificate: EkelandCertificate,
    multipliers: MultiplierEstimate,
    smp: ConstrainedSmpReport,
}

fn constrained_demo(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    let coeffs = cfg.coefficients()?;
    let e = cfg.ensemble()?;
    let u = studied_control(cfg, &e)?;
    let c = &cfg.constrained;
    let family: Vec<ControlProcess> = c
        .offsets
        .iter()
        .map(|&o| if o == 0.0 { u.clone() } else { u.offset(o) })
        .collect();
    let base = c.offsets.iter().position(|&o| o == 0.0).expect("validated");
    let certificate = ekeland_search(&coeffs, &cfg.constraints, &family, base, c.rho, &e, &cfg.solver)?;
    let selected = &family[certificate.selected];
    let selected_sol = solve_fbsde(&coeffs, selected, &e, &cfg.solver)?;
    let perturbed = spike_perturb(
        selected,
        &selected.offset(c.donor_offset),
        cfg.constrained_start(),
        c.epsilon,
        cfg.grid.horizon,
    )?;
    let perturbed_sol = solve_fbsde(&coeffs, &perturbed, &e, &cfg.solver)?;
    let baseline = certificate.members[base].penalized.cost.mean;
    let multipliers = extract_multipliers(
        &coeffs,
        &cfg.constraints,
        &selected_sol,
        &perturbed_sol,
        baseline,
        c.rho,
    )?;
    let adjoint = solve_constrained_adjoint(
        &coeffs,
        &cfg.constraints,
        &selected_sol,
        &multipliers.normalized,
        &e,
        &cfg.solver,
    )?;
    let probes = probe_grid(cfg.smp.lo, cfg.smp.hi, cfg.smp.count);
    let smp = check_constrained_smp(
        &coeffs,
        &cfg.constraints,
        &selected_sol,
        &adjoint,
        &multipliers.normalized,
        &probes,
        cfg.smp.tol,
    )?;
    let failures = certificate
        .violated()
        .into_iter()
        .map(|clause| format!("selection certificate clause {clause} fails"))
        .collect();
    out.json(
        "constrained_report.json",
        &ConstrainedOutput {
            offsets: c.offsets.clone(),
            certificate,
            multipliers,
            smp,
        },
    )?;
    Ok(failures)
}

#[derive(Serialize)]
struct CashOutput {
    optimality: OptimalityReport,
    /// Largest `|c1 q - c2 p + u* - l|` over the nodes, with oracle `(p, q)`.
    first_order_residual: f64,
    oracle_x: OracleAgreement,
    oracle_y: OracleAgreement,
    oracle_p: OracleAgreement,
    oracle_q: OracleAgreement,
    iterations: Vec<usize>,
}

fn cash_demo(cfg: &RunConfig, out: &mut Artifacts) -> Result<Vec<String>> {
    if cfg.model != CASH_MODEL {
        return Err(Error::param(
            "model",
            format!("cash-demo needs model `{CASH_MODEL}`, got `{}`", cfg.model),
        ));
    }
    let study = run_cash_study(&cfg.cash_study())?;
    let grid = study.ensemble.grid();
    let residual = first_order_residuals(&cfg.linear, grid, &study.oracle, &study.optimal)?
        .into_iter()
        .fold(0.0_f64, |m, r| m.max(r.abs()));
    let adj = study
        .adjoint
        .solution
        .as_ref()
        .expect("Monte Carlo adjoint keeps its solution");
    let report = CashOutput {
        first_order_residual: residual,
        oracle_x: oracle_agreement(
            &study.trajectory.estimates(Component::X),
            &study.state_oracle.forward,
            ORACLE_K,
        )?,
        oracle_y: oracle_agreement(
            &study.trajectory.estimates(Component::Y),
            &study.state_oracle.backward,
            ORACLE_K,
        )?,
        oracle_p: oracle_agreement(&adj.estimates(Component::X), &study.oracle.p, ORACLE_K)?,
        oracle_q: oracle_agreement(&adj.estimates(Component::Y), &study.oracle.q, ORACLE_K)?,
        iterations: study.trajectory.iterations.clone(),
        optimality: study.report.clone(),
    };
    out.json("optimality_report.json", &report)?;
    out.csv("adjoint.csv", |w| {
        write_adjoint_csv(w, grid, &study.oracle, &study.optimal)
    })?;
    out.csv("means_u_star.csv", |w| write_means_csv(w, &study.trajectory))?;
    for (rec, sol) in study.report.comparisons.iter().zip(&study.comparison_solutions) {
        out.csv(&format!("means_{}.csv", file_label(&rec.label)), |w| {
            write_means_csv(w, sol)
        })?;
    }
    Ok(study
        .report
        .comparisons
        .iter()
        .filter(|r| r.gap.mean + ORACLE_K * r.gap.se < 0.0)
        .map(|r| format!("comparison {} beats the optimum: gap {:.3e}", r.label, r.gap.mean))
        .collect())
}
