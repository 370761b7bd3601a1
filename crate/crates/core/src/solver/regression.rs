//! Least-squares projection on polynomial bases of the Markov state.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows are accumulated in fixed-size chunks and the partial sums added in
/// chunk order, so results do not depend on the thread count.
const CHUNK: usize = 512;

/// Relative eigenvalue cutoff of the normal-equation pseudo-inverse.
const EIGEN_CUTOFF: f64 = 1e-12;

/// Polynomial basis of total degree `<= degree` in standardized state variables,
/// optionally augmented by an activity indicator `1{R = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Which input variables survive (near-constant ones are dropped).
    kept: Vec<usize>,
    exponents: Vec<Vec<u32>>,
    indicator: bool,
}

impl Basis {
    /// Builds the basis from sample values: `vars[k][row]` and `active[row]`.
    pub fn fit(vars: &[Vec<f64>], active: Option<&[bool]>, degree: usize) -> Self {
        let mut means = Vec::new();
        let mut scales = Vec::new();
        let mut kept = Vec::new();
        for (k, v) in vars.iter().enumerate() {
            let n = v.len() as f64;
            if v.is_empty() {
                continue;
            }
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                kept.push(k);
                means.push(mean);
                scales.push(sd);
            }
        }
        let exponents = monomials(kept.len(), degree);
        let indicator = active.is_some_and(|a| a.iter().any(|&b| b) && a.iter().any(|&b| !b));
        Self {
            means,
            scales,
            kept,
            exponents,
            indicator,
        }
    }

    pub fn columns(&self) -> usize {
        self.exponents.len() + usize::from(self.indicator)
    }

    /// Writes the basis functions at one state into `out`.
    pub fn eval(&self, vars: &[f64], active: bool, out: &mut [f64]) {
        let mut std = [0.0; 8];
        for (j, &k) in self.kept.iter().enumerate() {
            std[j] = (vars[k] - self.means[j]) / self.scales[j];
        }
        for (c, e) in self.exponents.iter().enumerate() {
            out[c] = e.iter().zip(&std).map(|(&p, &s)| s.powi(p as i32)).product();
        }
        if self.indicator {
            out[self.exponents.len()] = if active { 1.0 } else { 0.0 };
        }
    }
}

/// Exponent vectors of all monomials of total degree `<= degree` in `k` variables,
/// constant first, then by increasing degree.
fn monomials(k: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; k]];
    let mut last = vec![vec![0u32; k]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &last {
            // Only raise variables at or after the last raised one to avoid duplicates.
            let start = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for j in start..k {
                let mut f = e.clone();
                f[j] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        last = next;
    }
    out
}

/// Least-squares coefficients for rows produced by `row(index, buf) -> Some(target)`
/// (rows returning `None` are skipped). Returns the coefficients and the number
/// of rows used.
pub fn least_squares<F>(rows: &[usize], columns: usize, row: F) -> (Vec<f64>, usize)
where
    F: Fn(usize, &mut [f64]) -> Option<f64> + Sync,
{
    let partials: Vec<(Vec<f64>, Vec<f64>, usize)> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut xtx = vec![0.0; columns * columns];
            let mut xty = vec![0.0; columns];
            let mut used = 0;
            let mut buf = vec![0.0; columns];
            for &r in chunk {
                if let Some(target) = row(r, &mut buf) {
                    used += 1;
                    for a in 0..columns {
                        xty[a] += buf[a] * target;
                        for b in a..columns {
                            xtx[a * columns + b] += buf[a] * buf[b];
                        }
                    }
                }
            }
            (xtx, xty, used)
        })
        .collect();
    let mut xtx = DMatrix::<f64>::zeros(columns, columns);
    let mut xty = DVector::<f64>::zeros(columns);
    let mut used = 0;
    for (a_part, b_part, u) in partials {
        used += u;
        for a in 0..columns {
            xty[a] += b_part[a];
            for b in a..columns {
                xtx[(a, b)] += a_part[a * columns + b];
            }
        }
    }
    for a in 0..columns {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    (pseudo_solve(xtx, xty), used)
}

fn pseudo_solve(xtx: DMatrix<f64>, xty: DVector<f64>) -> Vec<f64> {
    let n = xty.len();
    if n == 0 {
        return Vec::new();
    }
    let eig = xtx.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut coef = DVector::<f64>::zeros(n);
    if top <= 0.0 {
        return coef.as_slice().to_vec();
    }
    for k in 0..n {
        let lambda = eig.eigenvalues[k];
        if lambda > EIGEN_CUTOFF * top {
            let v = eig.eigenvectors.column(k);
            coef += v * (v.dot(&xty) / lambda);
        }
    }
    coef.as_slice().to_vec()
}

pub(crate) fn require_rows(node: usize, rows: usize, columns: usize) -> Result<()> {
    if rows < columns {
        Err(Error::BasisDegeneracy { node, rows, columns })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(0, 2).len(), 1);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 2).len(), 10);
        assert_eq!(monomials(2, 3).len(), 10);
        let m = monomials(2, 2);
        let mut sorted = m.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), m.len());
    }

    #[test]
    fn recovers_a_quadratic() {
        let xs: Vec<f64> = (0..200).map(|k| -1.0 + 0.01 * k as f64).collect();
        let rs: Vec<f64> = (0..200).map(|k| ((k * 37) % 11) as f64 * 0.1).collect();
        let basis = Basis::fit(&[xs.clone(), rs.clone()], None, 2);
        assert_eq!(basis.columns(), 6);
        let truth = |x: f64, r: f64| 1.0 + 2.0 * x - x * r + 0.5 * r * r;
        let rows: Vec<usize> = (0..200).collect();
        let (coef, used) = least_squares(&rows, basis.columns(), |i, buf| {
            basis.eval(&[xs[i], rs[i]], true, buf);
            Some(truth(xs[i], rs[i]))
        });
        assert_eq!(used, 200);
        let mut buf = vec![0.0; 6];
        basis.eval(&[0.3, 0.7], true, &mut buf);
        let fit: f64 = buf.iter().zip(&coef).map(|(a, b)| a * b).sum();
        assert!((fit - truth(0.3, 0.7)).abs() < 1e-9);
    }

    #[test]
    fn constant_variables_are_dropped() {
        let basis = Basis::fit(&[vec![1.0; 10], vec![0.0; 10]], Some(&[true; 10]), 2);
        assert_eq!(basis.columns(), 1);
        let rows: Vec<usize> = (0..10).collect();
        let (coef, _) = least_squares(&rows, 1, |i, buf| {
            basis.eval(&[1.0, 0.0], true, buf);
            Some(i as f64)
        });
        assert!((coef[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn indicator_only_when_both_states_occur() {
        let x = vec![vec![0.0, 1.0, 2.0]];
        assert_eq!(Basis::fit(&x, Some(&[true, false, true]), 1).columns(), 3);
        assert_eq!(Basis::fit(&x, Some(&[true, true, true]), 1).columns(), 2);
    }
}
