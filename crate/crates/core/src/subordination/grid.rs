use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clock-time discretization `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Domain("a time grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Domain(format!("grid must start at 0, got {}", nodes[0])));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Domain(format!(
                "grid must be strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { nodes })
    }

    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::param("steps", "at least one step is required"));
        }
        let nodes = (0..=steps)
            .map(|i| {
                if i == steps {
                    horizon
                } else {
                    horizon * i as f64 / steps as f64
                }
            })
            .collect();
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of cells `N`.
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("non-empty")
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `t_{i+1} - t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn dts(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.windows(2).map(|w| w[1] - w[0])
    }

    /// Refinement by an integer factor; shared nodes are bitwise identical.
    pub fn refine(&self, factor: usize) -> Self {
        let mut nodes = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.nodes.windows(2) {
            for k in 0..factor {
                nodes.push(if k == 0 {
                    w[0]
                } else {
                    w[0] + (w[1] - w[0]) * k as f64 / factor as f64
                });
            }
        }
        nodes.push(self.horizon());
        Self { nodes }
    }

    /// Index of the cell containing `t` (cells are `[t_i, t_{i+1})`, the last one closed).
    pub fn cell_of(&self, t: f64) -> usize {
        match self.nodes.binary_search_by(|n| n.total_cmp(&t)) {
            Ok(i) => i.min(self.steps() - 1),
            Err(i) => i.saturating_sub(1).min(self.steps() - 1),
        }
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(nodes: Vec<f64>) -> Result<Self> {
        Self::new(nodes)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_hits_endpoints() {
        let g = TimeGrid::uniform(0.7, 7).unwrap();
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.horizon(), 0.7);
        assert_eq!(g.steps(), 7);
        assert!(g.dts().all(|d| d > 0.0));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::uniform(-1.0, 3).is_err());
    }

    #[test]
    fn refinement_keeps_coarse_nodes() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let f = g.refine(10);
        assert_eq!(f.steps(), 100);
        for i in 0..=10 {
            assert_eq!(f.t(10 * i), g.t(i));
        }
    }

    #[test]
    fn locates_cells() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.cell_of(0.0), 0);
        assert_eq!(g.cell_of(0.3), 1);
        assert_eq!(g.cell_of(0.5), 2);
        assert_eq!(g.cell_of(1.0), 3);
    }
}
