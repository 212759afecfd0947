//! Experiment configuration files.
//!
//! A config is a TOML document. Every experiment needs `kind`, `[grid]` and
//! `[monte_carlo]` (which carries the mandatory seed); the other sections
//! depend on the kind and are checked by [`ExperimentConfig::validate`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SimulateSdde,
    SolveBsde,
    SolveAdjoint,
    CheckDuality,
    Optimize,
    LqDemo,
    RamseyDemo,
    ConvergenceSweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::SimulateSdde => "simulate-sdde",
            Kind::SolveBsde => "solve-bsde",
            Kind::SolveAdjoint => "solve-adjoint",
            Kind::CheckDuality => "check-duality",
            Kind::Optimize => "optimize",
            Kind::LqDemo => "lq-demo",
            Kind::RamseyDemo => "ramsey-demo",
            Kind::ConvergenceSweep => "convergence-sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub delay: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "default_degree")]
    pub basis_degree: usize,
}

fn default_degree() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dX = (A1 X + A2 X_d + A3 u) dt + (B1 X + B2 X_d + B3 u) dW`.
    Lq { a: [f64; 3], b: [f64; 3] },
    Ramsey {
        k_prod: f64,
        labor: f64,
        sigma0: f64,
        sigma1: f64,
        r: f64,
        gamma: f64,
        lower: f64,
        upper: f64,
        utility_cap: Option<f64>,
    },
    /// Scalar model from expressions. `drift` and `diffusion` may use
    /// `t x x_d u`, `running_cost` may use `t x u`, `terminal_cost` only `x`,
    /// and the optional closed-form `inverse` of the diffusion `t x x_d q`.
    Expression {
        drift: String,
        diffusion: String,
        #[serde(default)]
        running_cost: Option<String>,
        terminal_cost: String,
        #[serde(default)]
        inverse: Option<String>,
        lipschitz: f64,
        inversion_modulus: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintConfig {
    Whole,
    Lower { lower: f64 },
    Box { lower: f64, upper: f64 },
}

/// Initial segment, constant at `value` on `[-delay, 0]`; `value` is also the
/// target `a` of the initial constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub value: f64,
}

/// Terminal value `xi` as an expression in `x = W(T)` and `t = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub xi: String,
}

/// Open-loop control as an expression in `t` and `x = W(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub u: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointConfig {
    pub h0: f64,
    pub h1: f64,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self { h0: 1.0, h1: 1.0 }
    }
}

/// Random probes `xi + c0 + c1 x` around the terminal value, with `c0, c1`
/// uniform in `[-amplitude, amplitude]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_probes")]
    pub count: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_probes() -> usize {
    5
}

fn default_amplitude() -> f64 {
    0.5
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { count: default_probes(), amplitude: default_amplitude() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_factor")]
    pub path_factor: usize,
}

fn default_levels() -> usize {
    3
}

fn default_factor() -> usize {
    2
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { levels: default_levels(), path_factor: default_factor() }
    }
}

/// Overrides of the solver defaults; absent keys keep the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub initial_penalty: Option<f64>,
    pub penalty_growth: Option<f64>,
    pub stages: Option<usize>,
    pub max_stages: Option<usize>,
    pub max_inner: Option<usize>,
    pub grad_tol: Option<f64>,
    pub feasibility_tol: Option<f64>,
    pub initial_step: Option<f64>,
    pub bsde_tol: Option<f64>,
    pub bsde_max_iter: Option<usize>,
    pub adjoint_tol: Option<f64>,
    pub adjoint_max_iter: Option<usize>,
    /// Probes per boundary path in the maximum-principle check.
    pub mp_probes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub grid: GridConfig,
    pub monte_carlo: MonteCarloConfig,
    pub model: Option<ModelConfig>,
    pub constraint: Option<ConstraintConfig>,
    pub initial: Option<InitialConfig>,
    pub terminal: Option<TerminalConfig>,
    pub control: Option<ControlConfig>,
    pub adjoint: Option<AdjointConfig>,
    pub probes: Option<ProbeConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("missing section [{section}] required by kind {kind}")]
    Missing { section: &'static str, kind: &'static str },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("expression '{source_text}': {error}")]
    Expression { source_text: String, error: crate::expr::ParseError },
    #[error("{0}")]
    Model(#[from] delaymp::Error),
}

pub fn expression(src: &str, allowed: &[Var]) -> Result<Expr, ConfigError> {
    Expr::parse_with(src, allowed).map_err(|error| ConfigError::Expression { source_text: src.to_string(), error })
}

impl ExperimentConfig {
    /// Parses a config. A run manifest is accepted as well, in which case the
    /// echoed `[config]` table is used.
    pub fn parse(text: &str) -> Result<(Self, toml::Table), ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let table = match (table.get("toolkit"), table.get("config")) {
            (Some(_), Some(toml::Value::Table(inner))) => inner.clone(),
            _ => table,
        };
        let config: Self = table.clone().try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok((config, table))
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, toml::Table), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    fn need<'a, T>(&self, section: &'a Option<T>, name: &'static str) -> Result<&'a T, ConfigError> {
        section.as_ref().ok_or(ConfigError::Missing { section: name, kind: self.kind.name() })
    }

    pub fn model(&self) -> Result<&ModelConfig, ConfigError> {
        self.need(&self.model, "model")
    }

    pub fn initial(&self) -> Result<&InitialConfig, ConfigError> {
        self.need(&self.initial, "initial")
    }

    pub fn terminal(&self) -> Result<&TerminalConfig, ConfigError> {
        self.need(&self.terminal, "terminal")
    }

    pub fn control(&self) -> Result<&ControlConfig, ConfigError> {
        self.need(&self.control, "control")
    }

    pub fn constraint(&self) -> Result<&ConstraintConfig, ConfigError> {
        self.need(&self.constraint, "constraint")
    }

    /// Checks that every section the kind reads is present and sane.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.monte_carlo.paths == 0 {
            return Err(ConfigError::Invalid("monte_carlo.paths must be positive".into()));
        }
        self.model()?;
        match self.kind {
            Kind::SimulateSdde => {
                self.initial()?;
                self.control()?;
            }
            Kind::SolveBsde | Kind::SolveAdjoint | Kind::CheckDuality | Kind::ConvergenceSweep => {
                self.initial()?;
                self.terminal()?;
            }
            Kind::Optimize => {
                self.initial()?;
                self.constraint()?;
            }
            Kind::LqDemo => {
                self.initial()?;
                if !matches!(self.model, Some(ModelConfig::Lq { .. })) {
                    return Err(ConfigError::Invalid("lq-demo needs an lq model".into()));
                }
            }
            Kind::RamseyDemo => {
                self.initial()?;
                if !matches!(self.model, Some(ModelConfig::Ramsey { .. })) {
                    return Err(ConfigError::Invalid("ramsey-demo needs a ramsey model".into()));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.levels < 2 || s.path_factor == 0 {
                return Err(ConfigError::Invalid("sweep needs at least 2 levels and a positive path factor".into()));
            }
        }
        Ok(())
    }
}
