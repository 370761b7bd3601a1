use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::grid::TimeGrid;
use super::levy::LevySpec;
use super::path::{invert_subordinator, overshoot_process, sample_subordinator, SubordinatorPath};
use crate::error::{Error, Result};
use crate::rng::{path_rng, Stream};

/// Default number of operational-time cells per clock step for infinite-activity families.
pub const DEFAULT_REFINEMENT: usize = 10;

/// One simulated scenario of the driving noise on a clock grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: Arc<TimeGrid>,
    /// Overshoot start `R_0`; the clock is frozen on `[0, r0]`.
    pub r0: f64,
    /// `L_{(t_i - r0)+}` at every node.
    pub l: Vec<f64>,
    /// Clamped increments of `L`, one per cell.
    pub dl: Vec<f64>,
    /// Overshoot `R_{t_i}` at every node.
    pub r: Vec<f64>,
    /// Increments of the time-changed Brownian motion, one per cell.
    pub dbl: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl PathBundle {
    /// Whether the clock runs at node `i` (`R_i = 0`).
    pub fn active(&self, i: usize) -> bool {
        self.r[i] == 0.0
    }

    /// `B_{L}` at every node, starting from 0.
    pub fn brownian_values(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.dbl.iter().scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            }))
            .collect()
    }

    /// Checks the exact pathwise invariants: clock bound, monotone `L`, nonnegative `R`.
    pub fn validate(&self, kappa: f64) -> Result<()> {
        for (i, &d) in self.dl.iter().enumerate() {
            if !(d >= 0.0 && d <= self.grid.dt(i) / kappa) {
                return Err(Error::Consistency(format!(
                    "dL[{i}] = {d} violates 0 <= dL <= dt/kappa"
                )));
            }
        }
        if self.l.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Consistency("L is not nondecreasing".into()));
        }
        if let Some(i) = self.r.iter().position(|&r| r < 0.0) {
            return Err(Error::Consistency(format!("negative overshoot at node {i}")));
        }
        Ok(())
    }
}

/// Centered Gaussian increments with variance `dL_i`; exactly zero on frozen cells.
///
/// One normal is consumed per cell whatever `dL_i` is, so the stream position
/// does not depend on the clock.
pub fn sample_subdiffusion<R: Rng + ?Sized>(dl: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    dl.iter()
        .enumerate()
        .map(|(i, &d)| {
            if !(d >= 0.0) {
                return Err(Error::Domain(format!("negative clock increment dL[{i}] = {d}")));
            }
            let n: f64 = rng.sample(StandardNormal);
            Ok(if d == 0.0 { 0.0 } else { d.sqrt() * n })
        })
        .collect()
}

/// Simulates path `index` of an ensemble. The subordinator is returned alongside the bundle.
pub fn simulate_path_with_subordinator(
    spec: &LevySpec,
    grid: &Arc<TimeGrid>,
    r0: f64,
    refinement: usize,
    seed: u64,
    index: u64,
) -> Result<(PathBundle, SubordinatorPath)> {
    if !(r0 >= 0.0 && r0.is_finite()) {
        return Err(Error::param("r0", format!("overshoot start must be >= 0, got {r0}")));
    }
    let cover = grid.horizon() + r0;
    let horizon = cover / spec.kappa();
    let mut rng = path_rng(seed, index, Stream::Subordinator);
    let s = sample_subordinator(spec, horizon, refinement.max(1) * grid.steps(), cover, &mut rng)?;
    let (l, dl) = invert_subordinator(&s, grid, r0)?;
    let r = overshoot_process(&s, &l, grid, r0)?;
    let mut gauss = path_rng(seed, index, Stream::Gaussian);
    let dbl = sample_subdiffusion(&dl, &mut gauss)?;
    let bundle = PathBundle {
        grid: Arc::clone(grid),
        r0,
        l,
        dl,
        r,
        dbl,
        seed,
        index,
    };
    Ok((bundle, s))
}

pub fn simulate_path(
    spec: &LevySpec,
    grid: &Arc<TimeGrid>,
    r0: f64,
    refinement: usize,
    seed: u64,
    index: u64,
) -> Result<PathBundle> {
    simulate_path_with_subordinator(spec, grid, r0, refinement, seed, index).map(|(b, _)| b)
}

/// Standard Brownian scenario without any time change: `L = t`, `R = 0`,
/// increments drawn from the same Gaussian stream as [`simulate_path`].
pub fn brownian_path(grid: &Arc<TimeGrid>, seed: u64, index: u64) -> PathBundle {
    let mut gauss = path_rng(seed, index, Stream::Gaussian);
    let dl: Vec<f64> = grid.dts().collect();
    let dbl = dl
        .iter()
        .map(|&d| {
            let n: f64 = gauss.sample(StandardNormal);
            d.sqrt() * n
        })
        .collect();
    PathBundle {
        grid: Arc::clone(grid),
        r0: 0.0,
        l: grid.nodes().to_vec(),
        dl,
        r: vec![0.0; grid.nodes().len()],
        dbl,
        seed,
        index,
    }
}

/// A set of independent scenarios sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    grid: Arc<TimeGrid>,
    kappa: f64,
    r0: f64,
    seed: u64,
    paths: Vec<PathBundle>,
}

impl Ensemble {
    /// Simulates `count` paths in parallel; the result does not depend on the thread count.
    pub fn simulate(
        spec: &LevySpec,
        grid: TimeGrid,
        r0: f64,
        count: usize,
        seed: u64,
        refinement: usize,
    ) -> Result<Self> {
        let grid = Arc::new(grid);
        let paths = (0..count as u64)
            .into_par_iter()
            .map(|m| simulate_path(spec, &grid, r0, refinement, seed, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            kappa: spec.kappa(),
            r0,
            seed,
            paths,
        })
    }

    /// Classical Brownian ensemble (no time change) with the same Gaussian streams.
    pub fn brownian(grid: TimeGrid, count: usize, seed: u64) -> Self {
        let grid = Arc::new(grid);
        let paths = (0..count as u64)
            .into_par_iter()
            .map(|m| brownian_path(&grid, seed, m))
            .collect();
        Self {
            grid,
            kappa: 1.0,
            r0: 0.0,
            seed,
            paths,
        }
    }

    /// Wraps explicit bundles (e.g. hand-built scenarios). All must share the grid.
    pub fn from_paths(kappa: f64, paths: Vec<PathBundle>) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Domain("an ensemble needs at least one path".into()))?;
        let grid = Arc::clone(&first.grid);
        let r0 = first.r0;
        let seed = first.seed;
        for p in &paths {
            if *p.grid != *grid {
                return Err(Error::Domain("ensemble paths live on different grids".into()));
            }
            let n = grid.steps();
            if p.l.len() != n + 1 || p.r.len() != n + 1 || p.dl.len() != n || p.dbl.len() != n {
                return Err(Error::Domain(format!("path {} is not aligned with the grid", p.index)));
            }
            p.validate(kappa)?;
        }
        Ok(Self {
            grid,
            kappa,
            r0,
            seed,
            paths,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PathBundle] {
        &self.paths
    }

    /// Contiguous sub-ensemble (used for independent batches).
    pub fn subset(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.paths.len() {
            return Err(Error::Domain(format!(
                "invalid path range {range:?} for {} paths",
                self.paths.len()
            )));
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            kappa: self.kappa,
            r0: self.r0,
            seed: self.seed,
            paths: self.paths[range].to_vec(),
        })
    }

    /// Long-format CSV: `path_id,t,L,dL,R,dBL`; increments are empty on the last node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "t", "L", "dL", "R", "dBL"])?;
        for p in &self.paths {
            for (i, &t) in self.grid.nodes().iter().enumerate() {
                let (dl, dbl) = match (p.dl.get(i), p.dbl.get(i)) {
                    (Some(a), Some(b)) => (a.to_string(), b.to_string()),
                    _ => (String::new(), String::new()),
                };
                w.write_record([
                    p.index.to_string(),
                    t.to_string(),
                    p.l[i].to_string(),
                    dl,
                    p.r[i].to_string(),
                    dbl,
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_clock_gives_zero_noise() {
        let mut rng = path_rng(9, 0, Stream::Gaussian);
        let d = sample_subdiffusion(&[0.1, 0.0, 0.0, 0.2], &mut rng).unwrap();
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        assert_ne!(d[0], 0.0);
        assert!(sample_subdiffusion(&[-1.0], &mut rng).is_err());
    }

    #[test]
    fn pure_drift_unit_matches_brownian_builder_bitwise() {
        let spec = LevySpec::pure_drift(1.0).unwrap();
        let grid = Arc::new(TimeGrid::uniform(1.0, 50).unwrap());
        for m in 0..5 {
            let a = simulate_path(&spec, &grid, 0.0, 10, 42, m).unwrap();
            let b = brownian_path(&grid, 42, m);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ensembles_are_deterministic() {
        let spec = LevySpec::stable(1.0, 0.5).unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let a = Ensemble::simulate(&spec, grid.clone(), 0.0, 64, 5, 10).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| Ensemble::simulate(&spec, grid, 0.0, 64, 5, 10).unwrap());
        assert_eq!(a, b);
        for p in a.paths() {
            p.validate(1.0).unwrap();
        }
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let spec = LevySpec::pure_drift(2.0).unwrap();
        let e = Ensemble::simulate(&spec, TimeGrid::uniform(1.0, 10).unwrap(), 0.0, 1, 0, 10).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path_id,t,L,dL,R,dBL"));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 11);
        assert!(rows[10].ends_with(",,0,"));
        for row in rows {
            let cols: Vec<f64> = row.split(',').take(3).map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[2], cols[1] / 2.0);
        }
    }
}
