//! Run configuration: strict JSON schema with documented defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subdiff::casestudy::{CashStudyConfig, Comparison};
use subdiff::constrained::ConstraintSpec;
use subdiff::model::catalog::{self, DEFAULT_NONLINEARITY};
use subdiff::model::{CoefficientSet, LinearModelSpec};
use subdiff::solver::{ControlDomain, SolverOptions};
use subdiff::subordination::{Ensemble, LevySpec, TimeGrid, DEFAULT_REFINEMENT};

/// Keys that have no default.
pub const REQUIRED_KEYS: &[&str] = &["model", "levy"];

/// Failure to produce a valid configuration, with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.path, self.message)
        }
    }
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registered model name, see [`catalog::MODELS`].
    pub model: String,
    /// Parameters of the cash models.
    #[serde(default)]
    pub linear: LinearModelSpec,
    /// Perturbation strength of `cash-nonlinear`.
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    pub levy: LevySpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default = "default_solver")]
    pub solver: SolverOptions,
    #[serde(default)]
    pub control: ControlKind,
    /// Admissible control values.
    #[serde(default = "real_domain")]
    pub control_domain: ControlDomain,
    #[serde(default)]
    pub assumptions: AssumptionsConfig,
    #[serde(default)]
    pub smp: SmpConfig,
    #[serde(default)]
    pub spike: SpikeConfig,
    #[serde(default)]
    pub constraints: ConstraintSpec,
    #[serde(default)]
    pub constrained: ConstrainedConfig,
    #[serde(default = "default_comparisons")]
    pub comparisons: Vec<Comparison>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker threads; `--threads` takes precedence. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_nonlinearity() -> f64 {
    DEFAULT_NONLINEARITY
}

fn default_x0() -> f64 {
    1.0
}

fn default_solver() -> SolverOptions {
    CashStudyConfig::default().solver
}

fn default_comparisons() -> Vec<Comparison> {
    CashStudyConfig::default().comparisons
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub seed: u64,
    /// Operational-time substeps per grid cell for infinite-activity clocks.
    pub refinement: usize,
    /// Initial overshoot `R(0)`.
    pub r0: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        let cash = CashStudyConfig::default();
        Self {
            paths: cash.paths,
            seed: cash.seed,
            refinement: DEFAULT_REFINEMENT,
            r0: 0.0,
        }
    }
}

/// The control under study.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ControlKind {
    /// Closed-form optimum of the cash model built from `linear`.
    #[default]
    CashOptimal,
    /// Cash optimum shifted by `offset`.
    OptimalOffset {
        offset: f64,
    },
    /// The target profile `l` of `linear`.
    Target,
    Constant {
        value: f64,
    },
    /// Piecewise-linear in time.
    Tabulated {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn real_domain() -> ControlDomain {
    ControlDomain::Real
}

/// Where the adjoint `(p, q)` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointSource {
    /// The deterministic oracle for `cash-management`, Monte Carlo otherwise.
    Auto,
    Oracle,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionsConfig {
    /// Monotonicity level; `min(m2, n1)` of `linear` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    /// Half-width of the sampled box in every state argument.
    pub radius: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for AssumptionsConfig {
    fn default() -> Self {
        Self {
            constant: None,
            radius: 2.0,
            samples: 4096,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmpConfig {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub tol: f64,
    pub adjoint: AdjointSource,
}

impl Default for SmpConfig {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            count: 41,
            tol: 1e-6,
            adjoint: AdjointSource::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeConfig {
    /// Window start; `0.4 T` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    pub widths: Vec<f64>,
    pub duality_k: f64,
    /// The donor control is the studied control shifted by this amount.
    pub donor_offset: f64,
    pub adjoint: AdjointSource,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            start: None,
            widths: vec![0.02, 0.04, 0.08, 0.16],
            duality_k: 3.0,
            donor_offset: 1.0,
            adjoint: AdjointSource::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstrainedConfig {
    pub rho: f64,
    /// Family members are the studied control shifted by these amounts; `0` is the base.
    pub offsets: Vec<f64>,
    /// Width of the spike that perturbs the selected control.
    pub epsilon: f64,
    /// Spike start; `0.4 T` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    /// Donor of the perturbing spike, as a shift of the selected control.
    pub donor_offset: f64,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            offsets: vec![-0.2, -0.1, 0.0, 0.1, 0.2],
            epsilon: 1e-3,
            start: None,
            donor_offset: 1.0,
        }
    }
}

impl RunConfig {
    /// Parses and validates a configuration text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = if text.trim().is_empty() {
            serde_json::Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?
        };
        let Some(object) = value.as_object() else {
            return Err(ConfigError::new("", "the configuration must be a JSON object"));
        };
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|k| !object.contains_key(*k))
            .collect();
        if !missing.is_empty() {
            return Err(ConfigError::new(
                "",
                format!(
                    "missing required keys: {} (required: {})",
                    missing.join(", "),
                    REQUIRED_KEYS.join(", ")
                ),
            ));
        }
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |path: &str, e: subdiff::Error| ConfigError::new(path, e.to_string());
        if !catalog::MODELS.contains(&self.model.as_str()) {
            return Err(ConfigError::new(
                "model",
                format!(
                    "unknown model `{}`; registered: {}",
                    self.model,
                    catalog::MODELS.join(", ")
                ),
            ));
        }
        self.linear.validate().map_err(|e| core("linear", e))?;
        if !self.x0.is_finite() {
            return Err(ConfigError::new("x0", "must be finite"));
        }
        if !self.nonlinearity.is_finite() {
            return Err(ConfigError::new("nonlinearity", "must be finite"));
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(ConfigError::new("grid.horizon", "must be finite and > 0"));
        }
        if self.grid.steps == 0 {
            return Err(ConfigError::new("grid.steps", "must be >= 1"));
        }
        if self.monte_carlo.paths == 0 {
            return Err(ConfigError::new("monte_carlo.paths", "must be >= 1"));
        }
        if self.monte_carlo.refinement == 0 {
            return Err(ConfigError::new("monte_carlo.refinement", "must be >= 1"));
        }
        if !(self.monte_carlo.r0 >= 0.0 && self.monte_carlo.r0.is_finite()) {
            return Err(ConfigError::new("monte_carlo.r0", "must be finite and >= 0"));
        }
        self.solver.validate().map_err(|e| core("solver", e))?;
        if let ControlKind::Tabulated { times, values } = &self.control {
            subdiff::model::TargetProfile::Tabulated {
                times: times.clone(),
                values: values.clone(),
            }
            .validate()
            .map_err(|e| core("control", e))?;
        }
        if let Some(c) = self.assumptions.constant {
            if !(c > 0.0 && c.is_finite()) {
                return Err(ConfigError::new("assumptions.constant", "must be finite and > 0"));
            }
        }
        if !(self.assumptions.radius > 0.0 && self.assumptions.radius.is_finite()) {
            return Err(ConfigError::new("assumptions.radius", "must be finite and > 0"));
        }
        if self.assumptions.samples < 1000 {
            return Err(ConfigError::new("assumptions.samples", "must be >= 1000"));
        }
        if !(self.smp.lo <= self.smp.hi && self.smp.lo.is_finite() && self.smp.hi.is_finite()) {
            return Err(ConfigError::new("smp", "probe range must satisfy lo <= hi"));
        }
        if self.smp.count == 0 {
            return Err(ConfigError::new("smp.count", "must be >= 1"));
        }
        if !(self.smp.tol >= 0.0) {
            return Err(ConfigError::new("smp.tol", "must be >= 0"));
        }
        self.spike_options()
            .validate(self.grid.horizon)
            .map_err(|e| core("spike", e))?;
        if !(self.spike.duality_k > 0.0) {
            return Err(ConfigError::new("spike.duality_k", "must be > 0"));
        }
        self.constraints.validate().map_err(|e| core("constraints", e))?;
        let c = &self.constrained;
        if !(c.rho > 0.0 && c.rho.is_finite()) {
            return Err(ConfigError::new("constrained.rho", "must be finite and > 0"));
        }
        if c.offsets.is_empty() || !c.offsets.contains(&0.0) {
            return Err(ConfigError::new(
                "constrained.offsets",
                "must be non-empty and contain 0 (the base control)",
            ));
        }
        if !(c.epsilon > 0.0 && self.constrained_start() + c.epsilon <= self.grid.horizon) {
            return Err(ConfigError::new(
                "constrained.epsilon",
                "the perturbation window must be non-empty and inside [0, T]",
            ));
        }
        if self.comparisons.is_empty() {
            return Err(ConfigError::new(
                "comparisons",
                "at least one comparison control is required",
            ));
        }
        if self.threads == Some(0) {
            return Err(ConfigError::new("threads", "must be >= 1"));
        }
        Ok(())
    }

    /// The configuration without the settings that cannot change results.
    pub fn reproducible(&self) -> Self {
        Self {
            output: None,
            threads: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the effective configuration without the output location and
    /// thread count, neither of which affects results.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.reproducible()).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.monte_carlo.seed
    }

    pub fn grid(&self) -> subdiff::Result<TimeGrid> {
        TimeGrid::uniform(self.grid.horizon, self.grid.steps)
    }

    pub fn ensemble(&self) -> subdiff::Result<Ensemble> {
        Ensemble::simulate(
            &self.levy,
            self.grid()?,
            self.monte_carlo.r0,
            self.monte_carlo.paths,
            self.monte_carlo.seed,
            self.monte_carlo.refinement,
        )
    }

    pub fn coefficients(&self) -> subdiff::Result<CoefficientSet> {
        catalog::lookup(&self.model, &self.linear, self.x0, self.nonlinearity)
    }

    pub fn spike_options(&self) -> subdiff::control::SpikeOptions {
        let mut o = subdiff::control::SpikeOptions::for_horizon(self.grid.horizon);
        if let Some(s) = self.spike.start {
            o.start = s;
        }
        o.widths = self.spike.widths.clone();
        o.duality_k = self.spike.duality_k;
        o
    }

    pub fn constrained_start(&self) -> f64 {
        self.constrained.start.unwrap_or(0.4 * self.grid.horizon)
    }

    /// The cash study described by this configuration.
    pub fn cash_study(&self) -> CashStudyConfig {
        CashStudyConfig {
            model: self.linear.clone(),
            x0: self.x0,
            levy: self.levy,
            horizon: self.grid.horizon,
            steps: self.grid.steps,
            paths: self.monte_carlo.paths,
            seed: self.monte_carlo.seed,
            refinement: self.monte_carlo.refinement,
            solver: self.solver,
            comparisons: self.comparisons.clone(),
        }
    }
}
