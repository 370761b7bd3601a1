use rayon::prelude::*;
use serde::Serialize;

use super::{control_metric, penalized_cost, ConstraintSpec, PenalizedCost};
use crate::error::{Error, Result};
use crate::model::CoefficientSet;
use crate::solver::{expected_cost, solve_fbsde, ControlProcess, FbsdeSolution, SolverOptions};
use crate::subordination::Ensemble;

/// Slack for the certificate inequalities, which compare sums of rounded quantities.
const CLAUSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// Family member attaining the tightest margin, for clauses quantified over the family.
    pub witness: Option<usize>,
}

impl Clause {
    fn new(lhs: f64, rhs: f64, witness: Option<usize>) -> Self {
        Self {
            holds: lhs <= rhs + CLAUSE_TOL,
            lhs,
            rhs,
            witness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberRecord {
    pub index: usize,
    pub penalized: PenalizedCost,
    /// `d(w, u)`.
    pub distance_to_base: f64,
    /// `d(w, u_rho)`.
    pub distance_to_selected: f64,
}

/// Selected control `u_rho` and the clause-by-clause check of
///
/// ```text
/// i)   J_rho(u_rho) <= J_rho(u)
/// ii)  d(u_rho, u) <= sqrt(rho)
/// iii) J_rho(u_rho) <= J_rho(w) + sqrt(rho) d(w, u_rho)  for every family member w
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EkelandCertificate {
    pub rho: f64,
    pub base: usize,
    pub selected: usize,
    pub members: Vec<MemberRecord>,
    pub clause_i: Clause,
    pub clause_ii: Clause,
    pub clause_iii: Clause,
}

impl EkelandCertificate {
    pub fn holds(&self) -> bool {
        self.clause_i.holds && self.clause_ii.holds && self.clause_iii.holds
    }

    pub fn violated(&self) -> Vec<&'static str> {
        [
            ("i", &self.clause_i),
            ("ii", &self.clause_ii),
            ("iii", &self.clause_iii),
        ]
        .into_iter()
        .filter(|(_, c)| !c.holds)
        .map(|(n, _)| n)
        .collect()
    }
}

/// Finite realization of Ekeland's principle for `J_rho` around `family[base]`.
///
/// Among the members `w` with `J_rho(w) + sqrt(rho) d(w, u) <= J_rho(u)` the one
/// with the smallest `J_rho` is selected (ties to the lowest index). Then clause
/// iii) follows from the triangle inequality, and i) and ii) hold whenever `u`
/// is feasible; every clause is nevertheless checked by enumeration.
pub fn ekeland_search(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    family: &[ControlProcess],
    base: usize,
    rho: f64,
    ensemble: &Ensemble,
    options: &SolverOptions,
) -> Result<EkelandCertificate> {
    if family.is_empty() {
        return Err(Error::Domain("the control family is empty".into()));
    }
    if base >= family.len() {
        return Err(Error::Domain(format!(
            "base index {base} is outside a family of {}",
            family.len()
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::param("rho", format!("must be finite and > 0, got {rho}")));
    }
    let solutions: Vec<FbsdeSolution> = family
        .par_iter()
        .map(|w| solve_fbsde(coeffs, w, ensemble, options))
        .collect::<Result<_>>()?;
    certify(coeffs, constraints, &solutions, base, rho, ensemble)
}

/// The selection and certificate over already solved family members.
pub(crate) fn certify(
    coeffs: &CoefficientSet,
    constraints: &ConstraintSpec,
    solutions: &[FbsdeSolution],
    base: usize,
    rho: f64,
    ensemble: &Ensemble,
) -> Result<EkelandCertificate> {
    let grid = ensemble.grid();
    let baseline = expected_cost(coeffs, &solutions[base])?.mean;
    let penalized: Vec<PenalizedCost> = solutions
        .iter()
        .map(|s| penalized_cost(coeffs, constraints, s, baseline, rho))
        .collect::<Result<_>>()?;
    let to_base: Vec<f64> = solutions
        .iter()
        .map(|s| control_metric(&s.v, &solutions[base].v, grid))
        .collect::<Result<_>>()?;

    let sqrt_rho = rho.sqrt();
    let j_base = penalized[base].value;
    let selected = (0..solutions.len())
        .filter(|&w| penalized[w].value + sqrt_rho * to_base[w] <= j_base)
        .min_by(|&a, &b| penalized[a].value.total_cmp(&penalized[b].value).then(a.cmp(&b)))
        .unwrap_or(base);

    let to_selected: Vec<f64> = solutions
        .iter()
        .map(|s| control_metric(&s.v, &solutions[selected].v, grid))
        .collect::<Result<_>>()?;
    let j_sel = penalized[selected].value;

    let clause_i = Clause::new(j_sel, j_base, None);
    let clause_ii = Clause::new(to_base[selected], sqrt_rho, None);
    let (witness, rhs) = (0..solutions.len())
        .map(|w| (w, penalized[w].value + sqrt_rho * to_selected[w]))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("family is non-empty");
    let clause_iii = Clause::new(j_sel, rhs, Some(witness));

    let members = (0..solutions.len())
        .map(|w| MemberRecord {
            index: w,
            penalized: penalized[w],
            distance_to_base: to_base[w],
            distance_to_selected: to_selected[w],
        })
        .collect();
    Ok(EkelandCertificate {
        rho,
        base,
        selected,
        members,
        clause_i,
        clause_ii,
        clause_iii,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModelSpec;
    use crate::subordination::{LevySpec, TimeGrid};

    fn setup() -> (CoefficientSet, Ensemble) {
        let c = LinearModelSpec::default().coefficients(1.0).unwrap();
        let e = Ensemble::simulate(
            &LevySpec::compound_poisson(1.0, 1.0, 0.5).unwrap(),
            TimeGrid::uniform(1.0, 20).unwrap(),
            0.0,
            64,
            9,
            10,
        )
        .unwrap();
        (c, e)
    }

    #[test]
    fn singleton_family_selects_base() {
        let (c, e) = setup();
        let cert = ekeland_search(
            &c,
            &ConstraintSpec::none(),
            &[ControlProcess::constant(0.5)],
            0,
            0.01,
            &e,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(cert.selected, 0);
        assert!(cert.holds());
        assert!((cert.members[0].penalized.value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn two_member_family_against_brute_force() {
        let (c, e) = setup();
        let u = ControlProcess::constant(0.5);
        let family = [u.clone(), u.offset(0.1)];
        let rho = 0.5;
        let cert = ekeland_search(
            &c,
            &ConstraintSpec::none(),
            &family,
            0,
            rho,
            &e,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(cert.holds(), "{:?}", cert.violated());
        let j: Vec<f64> = cert.members.iter().map(|m| m.penalized.value).collect();
        let d = |a: usize, b: usize| if a == b { 0.0 } else { 1.0 };
        for w in 0..2 {
            assert!(j[cert.selected] <= j[w] + rho.sqrt() * d(w, cert.selected) + 1e-12);
        }
        assert!((cert.members[1].distance_to_base - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_family_is_rejected() {
        let (c, e) = setup();
        let err = ekeland_search(&c, &ConstraintSpec::none(), &[], 0, 0.1, &e, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn small_rho_keeps_far_alternatives_out() {
        let (c, e) = setup();
        let u = ControlProcess::constant(0.5);
        let family = [u.clone(), u.offset(-1.0), u.offset(1.0)];
        let cert = ekeland_search(
            &c,
            &ConstraintSpec::none(),
            &family,
            0,
            1e-4,
            &e,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(cert.selected, 0);
        assert!(cert.holds());
    }
}
