use serde::Serialize;

use super::bundle::{Ensemble, PathBundle};
use crate::error::{Error, Result};

/// Mean of `dL_i / dt_i` over one conditioning event, with a 95% confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideEstimate {
    pub mean: f64,
    pub radius: f64,
    pub count: u64,
}

/// Clock speed split by whether the diffusion is running (`R_i = 0`) or frozen (`R_i > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivityEstimate {
    pub active: Option<SideEstimate>,
    pub inactive: Option<SideEstimate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn estimate(&self) -> Option<SideEstimate> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Some(SideEstimate {
            mean,
            radius: 1.96 * (var / n).sqrt(),
            count: self.n,
        })
    }
}

/// Streaming accumulator, so large ensembles need not be kept in memory.
/// Merging in a fixed order keeps results independent of scheduling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivityAccumulator {
    active: Moments,
    inactive: Moments,
}

impl ActivityAccumulator {
    /// Adds node `i` of one path, or every cell when `node` is `None`.
    pub fn push(&mut self, path: &PathBundle, node: Option<usize>) {
        let mut add = |i: usize| {
            let rate = path.dl[i] / path.grid.dt(i);
            if path.active(i) {
                self.active.push(rate);
            } else {
                self.inactive.push(rate);
            }
        };
        match node {
            Some(i) => add(i),
            None => (0..path.dl.len()).for_each(add),
        }
    }

    pub fn merge(&mut self, other: &ActivityAccumulator) {
        self.active.merge(&other.active);
        self.inactive.merge(&other.inactive);
    }

    pub fn estimate(&self) -> Result<ActivityEstimate> {
        if self.active.n + self.inactive.n == 0 {
            return Err(Error::Domain("activity rate of an empty ensemble".into()));
        }
        Ok(ActivityEstimate {
            active: self.active.estimate(),
            inactive: self.inactive.estimate(),
        })
    }
}

/// Conditional mean clock speed at node `i` (or pooled over all cells when `None`).
pub fn empirical_activity_rate(ensemble: &Ensemble, node: Option<usize>) -> Result<ActivityEstimate> {
    if ensemble.is_empty() {
        return Err(Error::Domain("activity rate of an empty ensemble".into()));
    }
    if let Some(i) = node {
        if i >= ensemble.grid().steps() {
            return Err(Error::Domain(format!("node {i} has no cell to its right")));
        }
    }
    let mut acc = ActivityAccumulator::default();
    for p in ensemble.paths() {
        acc.push(p, node);
    }
    acc.estimate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subordination::{LevySpec, TimeGrid};

    #[test]
    fn pure_drift_active_side_is_exact() {
        let spec = LevySpec::pure_drift(2.0).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 10).unwrap(), 0.0, 10, 1, 10).unwrap();
        let est = empirical_activity_rate(&e, Some(3)).unwrap();
        assert_eq!(est.active.unwrap().mean, 0.5);
        assert!(est.inactive.is_none());
    }

    #[test]
    fn frozen_side_shrinks_with_step() {
        use crate::subordination::path::{invert_subordinator, overshoot_process, SubordinatorPath};
        use std::sync::Arc;
        // One jump freezing the clock on [0.2034, 0.5051], off the grid nodes.
        let s = SubordinatorPath::from_jumps(1.0, 2.0, vec![0.2034], vec![0.3017]).unwrap();
        let mut previous = f64::INFINITY;
        for n in [10, 100, 1000] {
            let grid = Arc::new(TimeGrid::uniform(1.0, n).unwrap());
            let (l, dl) = invert_subordinator(&s, &grid, 0.0).unwrap();
            let r = overshoot_process(&s, &l, &grid, 0.0).unwrap();
            let bundle = PathBundle {
                grid: Arc::clone(&grid),
                r0: 0.0,
                dbl: vec![0.0; n],
                l,
                dl,
                r,
                seed: 0,
                index: 0,
            };
            let e = Ensemble::from_paths(1.0, vec![bundle]).unwrap();
            let inactive = empirical_activity_rate(&e, None).unwrap().inactive.unwrap();
            // Only the cell straddling the end of the flat period can move.
            let bound = 1.0 / inactive.count as f64;
            assert!(inactive.mean <= bound + 1e-12, "{} > {bound}", inactive.mean);
            assert!(inactive.mean < previous);
            previous = inactive.mean;
        }
    }
}
