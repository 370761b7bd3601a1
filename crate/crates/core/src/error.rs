use thiserror::Error;

/// Failure modes shared by every module of the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model or simulation parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Inputs are individually valid but inconsistent with each other
    /// (misaligned grids, empty ensembles, windows outside the horizon, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The subordinator could not be extended far enough to cover the clock horizon.
    #[error(
        "simulation budget exhausted: subordinator reached {reached} < target {target} after {extensions} extensions"
    )]
    SimulationBudget {
        reached: f64,
        target: f64,
        extensions: usize,
    },

    /// A computed quantity violated an internal invariant beyond rounding tolerance.
    #[error("internal consistency violated: {0}")]
    Consistency(String),

    /// A coefficient produced a non-finite value or gradient.
    #[error("coefficient `{name}` is not finite at t={t}, x={x}, y={y}, z={z}, v={v}")]
    Coefficient {
        name: &'static str,
        t: f64,
        x: f64,
        y: f64,
        z: f64,
        v: f64,
    },

    /// Picard iteration stopped contracting.
    #[error("Picard iteration diverged after {iterations} iterations (last change {last_change:.3e}); try a shorter horizon or finer grid")]
    Divergence { iterations: usize, last_change: f64 },

    /// Picard iteration ran out of budget without reaching the tolerance.
    #[error("Picard iteration did not reach tolerance {tol:.1e} within {iterations} iterations (last change {last_change:.3e})")]
    NotConverged {
        iterations: usize,
        tol: f64,
        last_change: f64,
    },

    /// Regression design matrix has fewer usable rows than basis functions.
    #[error("regression basis is degenerate at node {node}: {rows} rows for {columns} basis functions")]
    BasisDegeneracy { node: usize, rows: usize, columns: usize },

    /// The shooting map of a linear two-point boundary value problem is singular.
    #[error("ill-posed boundary value problem: shooting derivative {derivative:.3e}")]
    IllPosedBvp { derivative: f64 },

    /// Penalized cost and its perturbation both vanish, so multipliers are undefined.
    #[error("degenerate penalization: J_rho(u_rho^eps) + J_rho(u_rho) = 0")]
    DegeneratePenalization,

    /// A quantity needed for this computation has not been produced yet.
    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
