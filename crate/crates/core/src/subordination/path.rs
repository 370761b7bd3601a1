use rand::Rng;
use rand_distr::Distribution;

use super::grid::TimeGrid;
use super::levy::LevySpec;
use crate::error::{Error, Result};

/// Increments (of `L` or `R`) below this are exact zeros.
pub const FLAT_TOL: f64 = 1e-14;

const MAX_EXTENSIONS: usize = 64;

/// A right-continuous subordinator path `S_r = kappa r + sum_{r_k <= r} J_k`
/// on operational time `[0, horizon]`.
///
/// Infinite-activity families are represented by lumping the increment of each
/// refinement cell into a single jump at the cell's right end, which is exact in
/// law at the refinement nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    kappa: f64,
    horizon: f64,
    jump_times: Vec<f64>,
    jump_sizes: Vec<f64>,
    /// `cumulative[k] = J_0 + ... + J_k`.
    cumulative: Vec<f64>,
}

impl SubordinatorPath {
    /// Hand-built path from explicit jumps. Times must be strictly increasing in `(0, horizon]`.
    pub fn from_jumps(kappa: f64, horizon: f64, jump_times: Vec<f64>, jump_sizes: Vec<f64>) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::param("kappa", format!("must be positive, got {kappa}")));
        }
        if jump_times.len() != jump_sizes.len() {
            return Err(Error::Domain("jump times and sizes differ in length".into()));
        }
        if jump_times.windows(2).any(|w| !(w[1] > w[0])) || jump_times.iter().any(|&r| !(r > 0.0 && r <= horizon)) {
            return Err(Error::Domain(
                "jump times must be strictly increasing in (0, horizon]".into(),
            ));
        }
        if jump_sizes.iter().any(|&j| !(j > 0.0 && j.is_finite())) {
            return Err(Error::Domain("jump sizes must be positive and finite".into()));
        }
        let cumulative = jump_sizes
            .iter()
            .scan(0.0, |acc, j| {
                *acc += j;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            kappa,
            horizon,
            jump_times,
            jump_sizes,
            cumulative,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn jump_sizes(&self) -> &[f64] {
        &self.jump_sizes
    }

    fn jumps_before(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// `S_r` (right-continuous).
    pub fn value_at(&self, r: f64) -> f64 {
        let k = self.jump_times.partition_point(|&rk| rk <= r);
        self.kappa * r + self.jumps_before(k)
    }

    /// `S_{horizon}`.
    pub fn terminal_value(&self) -> f64 {
        self.value_at(self.horizon)
    }

    /// First passage `L_s = inf{r > 0 : S_r > s}` for a nondecreasing sequence of levels.
    fn first_passage(&self, levels: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut k = 0;
        let mut out = Vec::new();
        for s in levels {
            // Count jumps whose pre-jump level has been reached.
            while k < self.jump_times.len() && self.kappa * self.jump_times[k] + self.jumps_before(k) <= s {
                k += 1;
            }
            let l = if k == 0 {
                s / self.kappa
            } else {
                let j = k - 1;
                let post = self.kappa * self.jump_times[j] + self.cumulative[j];
                if s < post {
                    self.jump_times[j]
                } else {
                    ((s - self.cumulative[j]) / self.kappa).max(self.jump_times[j])
                }
            };
            out.push(l);
        }
        out
    }

    fn extend<R: Rng + ?Sized>(&mut self, spec: &LevySpec, block: f64, cells: usize, rng: &mut R) {
        let start = self.horizon;
        let end = start + block;
        let mut total = self.cumulative.last().copied().unwrap_or(0.0);
        let mut push = |time: f64, size: f64, total: &mut f64| {
            if size > 0.0 && time > 0.0 {
                *total += size;
                self.jump_times.push(time);
                self.jump_sizes.push(size);
                self.cumulative.push(*total);
            }
        };
        if spec.is_infinite_activity() {
            let dr = block / cells as f64;
            for c in 0..cells {
                let size = spec.sample_increment(dr, rng);
                let time = if c + 1 == cells {
                    end
                } else {
                    start + block * (c + 1) as f64 / cells as f64
                };
                push(time, size, &mut total);
            }
        } else if let Some((waits, sizes)) = spec.exp_jump() {
            let mut r = start;
            loop {
                r += waits.sample(rng);
                if r > end {
                    break;
                }
                let size = sizes.sample(rng);
                push(r, size, &mut total);
            }
        }
        self.horizon = end;
    }
}

/// Samples `S` on operational time `[0, horizon]`, extending block by block until
/// `S_horizon >= cover` (pass `cover = 0` to skip coverage).
///
/// `refinement` is the number of operational cells per block for the stable
/// families; it is ignored for finite-activity families.
pub fn sample_subordinator<R: Rng + ?Sized>(
    spec: &LevySpec,
    horizon: f64,
    refinement: usize,
    cover: f64,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::param(
            "horizon",
            format!("operational horizon must be positive, got {horizon}"),
        ));
    }
    if refinement == 0 {
        return Err(Error::param("refinement", "at least one operational cell is required"));
    }
    let mut path = SubordinatorPath {
        kappa: spec.kappa(),
        horizon: 0.0,
        jump_times: Vec::new(),
        jump_sizes: Vec::new(),
        cumulative: Vec::new(),
    };
    path.extend(spec, horizon, refinement, rng);
    let mut extensions = 0;
    while path.terminal_value() < cover {
        if extensions == MAX_EXTENSIONS {
            return Err(Error::SimulationBudget {
                reached: path.terminal_value(),
                target: cover,
                extensions,
            });
        }
        path.extend(spec, horizon, refinement, rng);
        extensions += 1;
    }
    Ok(path)
}

/// Inverse subordinator on the clock grid shifted by the overshoot start `r0`:
/// `L_i = L_{(t_i - r0)+}` and clamped increments `0 <= dL_i <= dt_i / kappa`.
pub fn invert_subordinator(path: &SubordinatorPath, grid: &TimeGrid, r0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(r0 >= 0.0) {
        return Err(Error::param("r0", format!("overshoot start must be >= 0, got {r0}")));
    }
    let top = (grid.horizon() - r0).max(0.0);
    if path.terminal_value() < top {
        return Err(Error::Domain(format!(
            "subordinator reaches {} before the clock level {top} is covered",
            path.terminal_value()
        )));
    }
    let mut l = path.first_passage(grid.nodes().iter().map(|&t| (t - r0).max(0.0)));
    for i in 1..l.len() {
        if l[i] < l[i - 1] {
            l[i] = l[i - 1];
        }
    }
    let kappa = path.kappa();
    let dl = (0..grid.steps())
        .map(|i| {
            let raw = (l[i + 1] - l[i]).min(grid.dt(i) / kappa);
            if raw < FLAT_TOL {
                0.0
            } else {
                raw
            }
        })
        .collect();
    Ok((l, dl))
}

/// Overshoot `R_t = r0 + S_{L_{(t - r0)+}} - t` at every grid node.
pub fn overshoot_process(path: &SubordinatorPath, l: &[f64], grid: &TimeGrid, r0: f64) -> Result<Vec<f64>> {
    if l.len() != grid.nodes().len() {
        return Err(Error::Domain("inverse values are not aligned with the grid".into()));
    }
    grid.nodes()
        .iter()
        .zip(l)
        .map(|(&t, &li)| {
            let r = r0 + path.value_at(li) - t;
            let tol = FLAT_TOL * t.abs().max(1.0);
            if r < -1e-10 * t.abs().max(1.0) {
                Err(Error::Consistency(format!("negative overshoot {r} at t={t}")))
            } else if r < tol {
                Ok(0.0)
            } else {
                Ok(r)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{path_rng, Stream};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(1.0, n).unwrap()
    }

    #[test]
    fn pure_drift_is_linear() {
        let spec = LevySpec::pure_drift(2.0).unwrap();
        let mut rng = path_rng(1, 0, Stream::Subordinator);
        let s = sample_subordinator(&spec, 1.0, 10, 0.0, &mut rng).unwrap();
        assert!(s.jump_times().is_empty());
        for r in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(s.value_at(r), 2.0 * r);
        }
    }

    #[test]
    fn pure_drift_inverse_is_exact() {
        let spec = LevySpec::pure_drift(2.0).unwrap();
        let g = grid(10);
        let mut rng = path_rng(1, 0, Stream::Subordinator);
        let s = sample_subordinator(&spec, 0.5, 10, 1.0, &mut rng).unwrap();
        let (l, dl) = invert_subordinator(&s, &g, 0.0).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            assert_eq!(l[i], t / 2.0);
        }
        for (i, d) in dl.iter().enumerate() {
            assert_eq!(*d, g.dt(i) / 2.0);
        }
        let r = overshoot_process(&s, &l, &g, 0.0).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn compound_poisson_without_jumps_is_drift_line() {
        let spec = LevySpec::compound_poisson(1.0, 0.0, 1.0).unwrap();
        let mut rng = path_rng(3, 0, Stream::Subordinator);
        let s = sample_subordinator(&spec, 1.0, 10, 1.0, &mut rng).unwrap();
        assert!(s.jump_times().is_empty());
        assert_eq!(s.value_at(0.7), 0.7);
    }

    #[test]
    fn jump_freezes_the_clock() {
        // Jump of size 0.3 at operational time 0.2 with kappa = 1: flat on [0.2, 0.5].
        let s = SubordinatorPath::from_jumps(1.0, 2.0, vec![0.2], vec![0.3]).unwrap();
        let g = grid(100);
        let (l, dl) = invert_subordinator(&s, &g, 0.0).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            if (0.2..=0.5).contains(&t) {
                assert!((l[i] - 0.2).abs() < 1e-12, "t={t} L={}", l[i]);
            }
        }
        assert!(dl[21..49].iter().all(|&d| d == 0.0));
        assert!((l[100] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn overshoot_before_start_decays_linearly() {
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let mut rng = path_rng(1, 0, Stream::Subordinator);
        let s = sample_subordinator(&spec, 1.0, 10, 1.0, &mut rng).unwrap();
        let g = grid(10);
        let (l, _) = invert_subordinator(&s, &g, 0.3).unwrap();
        let r = overshoot_process(&s, &l, &g, 0.3).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            if t < 0.3 {
                assert!((r[i] - (0.3 - t)).abs() < 1e-15);
                assert_eq!(l[i], 0.0);
            } else {
                assert_eq!(r[i], 0.0);
            }
        }
    }

    #[test]
    fn overshoot_matches_direct_evaluation_on_two_jump_path() {
        // Hand-built path: kappa = 1, jumps 0.25 at r = 0.1 and 0.15 at r = 0.4.
        // Clock flat periods: [0.1, 0.35] and [0.65, 0.8].
        let s = SubordinatorPath::from_jumps(1.0, 2.0, vec![0.1, 0.4], vec![0.25, 0.15]).unwrap();
        let g = grid(1000);
        let (l, _) = invert_subordinator(&s, &g, 0.0).unwrap();
        let r = overshoot_process(&s, &l, &g, 0.0).unwrap();
        for (i, &t) in g.nodes().iter().enumerate() {
            let expected = if (0.1..0.35).contains(&t) {
                0.35 - t
            } else if (0.65..0.8).contains(&t) {
                0.8 - t
            } else {
                0.0
            };
            assert!((r[i] - expected).abs() < 1e-10, "t={t}: {} vs {expected}", r[i]);
        }
        // Slope -1 across the first flat period.
        let a = g.nodes().iter().position(|&t| t > 0.15).unwrap();
        assert!(((r[a + 10] - r[a]) / (g.t(a + 10) - g.t(a)) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_is_enforced() {
        let s = SubordinatorPath::from_jumps(1.0, 0.5, vec![], vec![]).unwrap();
        assert!(matches!(invert_subordinator(&s, &grid(10), 0.0), Err(Error::Domain(_))));
        // The sampler extends until the target is covered.
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let mut rng = path_rng(1, 0, Stream::Subordinator);
        let s = sample_subordinator(&spec, 0.1, 4, 1.0, &mut rng).unwrap();
        assert!(s.terminal_value() >= 1.0);
        let err = sample_subordinator(&spec, 1e-3, 1, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::SimulationBudget { .. }));
    }
}
