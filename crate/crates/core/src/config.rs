//! Run configuration, read from TOML.
//!
//! ```toml
//! [problem]
//! dimension = 1
//! horizon = 1.0
//! hamiltonian = { potential = { terms = [{ wave = [1], cos = 0.1 }] } }
//! coupling = { family = "power-log", a = 1.0, exponent = 1.0, log_coef = 1.0 }
//! terminal = { terms = [{ coef = 1.0, exponent = 1.0 }] }
//! initial = { density = { constant = 1.0, terms = [{ wave = [1], cos = 0.3 }] } }
//!
//! [grid]
//! nx = 64
//! nt = 32
//! ```
//!
//! The full format is described in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsOptions;
use crate::grid::{GridError, GridSpec};
use crate::model::{
    CouplingSpec, HamiltonianSpec, InitialDensitySpec, ModelError, ProblemSpec, TerminalSpec, TrigPoly,
};
use crate::solver::SolverSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianBlock {
    /// Defaults to the identity.
    #[serde(default)]
    pub quadratic: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub potential: TrigPoly,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub tau: f64,
}

impl Default for HamiltonianBlock {
    fn default() -> Self {
        Self {
            quadratic: None,
            potential: TrigPoly::zero(),
            c0: None,
            tau: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub hamiltonian: HamiltonianBlock,
    pub coupling: CouplingSpec,
    pub terminal: TerminalSpec,
    #[serde(default = "InitialDensitySpec::uniform")]
    pub initial: InitialDensitySpec,
}

fn default_dimension() -> usize {
    1
}

fn default_horizon() -> f64 {
    1.0
}

impl ProblemBlock {
    pub fn to_spec(&self) -> ProblemSpec {
        let mut hamiltonian = HamiltonianSpec::isotropic(self.dimension, self.hamiltonian.potential.clone());
        if let Some(q) = &self.hamiltonian.quadratic {
            hamiltonian.quadratic = q.clone();
        }
        if let Some(c0) = self.hamiltonian.c0 {
            hamiltonian.c0 = c0;
        }
        hamiltonian.tau = self.hamiltonian.tau;
        ProblemSpec {
            dimension: self.dimension,
            horizon: self.horizon,
            hamiltonian,
            coupling: self.coupling.clone(),
            terminal: self.terminal.clone(),
            initial: self.initial.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub nx: usize,
    pub nt: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// `solution.csv` and the plot-ready CSV tables.
    Csv,
    /// SVG plots.
    Svg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    /// `report.json` is always written.
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Svg],
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub diagnostics: DiagnosticsOptions,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A parsed and validated configuration.
#[derive(Clone, Debug)]
pub struct ValidatedConfig {
    pub raw: RunConfig,
    pub spec: ProblemSpec,
    pub grid: GridSpec,
}

fn model_error(e: ModelError) -> ConfigError {
    match e {
        ModelError::Invalid { field, reason } => ConfigError::invalid(format!("problem.{field}"), reason),
        other => ConfigError::invalid("problem", other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(self) -> Result<ValidatedConfig, ConfigError> {
        let spec = self.problem.to_spec();
        spec.validate().map_err(model_error)?;
        let grid = GridSpec::new(spec.dimension, self.grid.nx, self.grid.nt, spec.horizon).map_err(|e| match e {
            GridError::Invalid { field, reason } => ConfigError::invalid(format!("grid.{field}"), reason),
            other => ConfigError::invalid("grid", other.to_string()),
        })?;
        self.solver
            .newton
            .validate()
            .map_err(|r| ConfigError::invalid("solver.newton", r))?;
        self.solver
            .continuation
            .validate()
            .map_err(|r| ConfigError::invalid("solver.continuation", r))?;
        self.diagnostics
            .validate()
            .map_err(|r| ConfigError::invalid("diagnostics.enabled", r))?;
        if let Some(t) = self.diagnostics.bound_tolerance {
            if !(t >= 0.0) {
                return Err(ConfigError::invalid("diagnostics.bound_tolerance", "must be non-negative"));
            }
        }
        Ok(ValidatedConfig { raw: self, spec, grid })
    }
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ValidatedConfig, ConfigError> {
    RunConfig::load(path)?.validate()
}
