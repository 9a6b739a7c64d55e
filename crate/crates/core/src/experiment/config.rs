//! Experiment configuration: a TOML file with flat key-value sections.
//!
//! ```toml
//! [problem]
//! agents = 100
//! sigma2_x = 1000.0
//! sigma_t = [1000.0, 500.0, 200.0]        # or [problem.sigma_t_range]
//!
//! [population]                             # generated discrete fleet ...
//! eta_max = 4
//! cost_floor = 1.0
//!
//! # [[agent]]                              # ... or explicit cost models
//! # kind = "quadratic"
//! # coeff = 1.0
//! # max_effort = 1.0
//!
//! [run]
//! seed = 42
//! trials = 200000
//! simulate = true
//! verify = false
//! compare_suboptimal = false
//!
//! [solver]
//! slack = 1.05
//! deviation_points = 41
//! z_threshold = 3.0
//! ```
//!
//! The master seed is mandatory: nothing in a run draws implicit entropy.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::SolverOptions;
use crate::effort::EffortCostModel;
use crate::estimation::PriorModel;
use crate::game::DeviationOptions;
use crate::mechanism::HonestAgent;

use super::population::generate_population;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<PopulationSection>,
    #[serde(default, rename = "agent", skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentSpec>,
    pub run: RunSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSection {
    pub agents: usize,
    pub sigma2_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_t_range: Option<SigmaRange>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default = "default_spacing")]
    pub spacing: String,
}

fn default_spacing() -> String {
    "linear".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSection {
    pub eta_max: u32,
    #[serde(default = "default_cost_floor")]
    pub cost_floor: f64,
}

fn default_cost_floor() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Quadratic {
        coeff: f64,
        max_effort: f64,
    },
    DiscreteLinear {
        unit_variance: f64,
        unit_cost: f64,
        max_count: u32,
    },
    Tabulated {
        efforts: Vec<f64>,
        costs: Vec<f64>,
    },
}

impl AgentSpec {
    pub fn build(&self) -> Result<EffortCostModel, ConfigError> {
        let model = match self {
            AgentSpec::Quadratic { coeff, max_effort } => {
                EffortCostModel::quadratic(*coeff, *max_effort)
            }
            AgentSpec::DiscreteLinear {
                unit_variance,
                unit_cost,
                max_count,
            } => EffortCostModel::discrete_linear(*unit_variance, *unit_cost, *max_count),
            AgentSpec::Tabulated { efforts, costs } => {
                if efforts.len() != costs.len() {
                    return Err(ConfigError::Invalid(
                        "tabulated efforts and costs must have equal length".into(),
                    ));
                }
                let points: Vec<(f64, f64)> =
                    efforts.iter().cloned().zip(costs.iter().cloned()).collect();
                EffortCostModel::tabulated(&points)
            }
        };
        model.map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_true")]
    pub simulate: bool,
    #[serde(default)]
    pub verify: bool,
    #[serde(default)]
    pub compare_suboptimal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest_precision: Option<f64>,
    /// Default output path for sweep CSV (the CLI's --out overrides it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

fn default_trials() -> u64 {
    200_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSection {
    #[serde(default = "default_realizability_grid")]
    pub realizability_grid: usize,
    #[serde(default = "default_binary_scale")]
    pub binary_scale: f64,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    #[serde(default = "default_bkp_target_cells")]
    pub bkp_target_cells: usize,
    #[serde(default = "default_bkp_sub_units")]
    pub bkp_sub_units: u64,
    #[serde(default = "default_descent_starts")]
    pub descent_starts: usize,
    #[serde(default = "default_descent_iters")]
    pub descent_iters: usize,
    #[serde(default = "default_slack")]
    pub slack: f64,
    #[serde(default = "default_deviation_points")]
    pub deviation_points: usize,
    #[serde(default = "default_z_threshold")]
    pub z_threshold: f64,
}

fn default_realizability_grid() -> usize {
    crate::effort::DEFAULT_REALIZABILITY_GRID
}
fn default_binary_scale() -> f64 {
    1e6
}
fn default_max_cells() -> usize {
    1 << 25
}
fn default_bkp_target_cells() -> usize {
    1 << 21
}
fn default_bkp_sub_units() -> u64 {
    1024
}
fn default_descent_starts() -> usize {
    16
}
fn default_descent_iters() -> usize {
    200
}
fn default_slack() -> f64 {
    1.05
}
fn default_deviation_points() -> usize {
    41
}
fn default_z_threshold() -> f64 {
    3.0
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            realizability_grid: default_realizability_grid(),
            binary_scale: default_binary_scale(),
            max_cells: default_max_cells(),
            bkp_target_cells: default_bkp_target_cells(),
            bkp_sub_units: default_bkp_sub_units(),
            descent_starts: default_descent_starts(),
            descent_iters: default_descent_iters(),
            slack: default_slack(),
            deviation_points: default_deviation_points(),
            z_threshold: default_z_threshold(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.problem.agents == 0 {
            return Err(ConfigError::Invalid("agent count must be positive".into()));
        }
        if !(self.problem.sigma2_x > 0.0 && self.problem.sigma2_x.is_finite()) {
            return Err(ConfigError::Invalid("sigma2_x must be positive".into()));
        }
        match (&self.problem.sigma_t, &self.problem.sigma_t_range) {
            (Some(list), None) => {
                if list.is_empty() {
                    return Err(ConfigError::Invalid(
                        "sigma_t sweep must be non-empty".into(),
                    ));
                }
                if list.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                    return Err(ConfigError::Invalid(
                        "sigma_t values must be positive".into(),
                    ));
                }
            }
            (None, Some(range)) => {
                if range.count == 0 {
                    return Err(ConfigError::Invalid(
                        "sigma_t_range count must be positive".into(),
                    ));
                }
                if !(range.start > 0.0 && range.stop > 0.0) {
                    return Err(ConfigError::Invalid(
                        "sigma_t_range must be positive".into(),
                    ));
                }
                if range.spacing != "linear" && range.spacing != "log" {
                    return Err(ConfigError::Invalid(format!(
                        "sigma_t_range spacing must be \"linear\" or \"log\", got {:?}",
                        range.spacing
                    )));
                }
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "either sigma_t or sigma_t_range is required".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "sigma_t and sigma_t_range are mutually exclusive".into(),
                ))
            }
        }
        match (&self.population, self.agents.is_empty()) {
            (Some(_), false) => {
                return Err(ConfigError::Invalid(
                    "population generator and explicit agent list are mutually exclusive".into(),
                ))
            }
            (None, true) => {
                return Err(ConfigError::Invalid(
                    "either a population generator or explicit agents are required".into(),
                ))
            }
            (None, false) if self.agents.len() != self.problem.agents => {
                return Err(ConfigError::Invalid(format!(
                    "problem.agents = {} but {} [[agent]] entries given",
                    self.problem.agents,
                    self.agents.len()
                )));
            }
            _ => {}
        }
        if let Some(h) = self.run.honest_precision {
            if !(h > 0.0 && h.is_finite()) {
                return Err(ConfigError::Invalid(
                    "honest_precision must be positive".into(),
                ));
            }
        }
        if self.run.trials == 0 {
            return Err(ConfigError::Invalid("trials must be positive".into()));
        }
        if !(self.solver.slack > 1.0) {
            return Err(ConfigError::Invalid("solver.slack must exceed 1".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> PriorModel {
        PriorModel::from_variance(self.problem.sigma2_x).expect("validated sigma2_x")
    }

    /// The threshold sweep, sorted ascending.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut values = if let Some(list) = &self.problem.sigma_t {
            list.clone()
        } else {
            let range = self.problem.sigma_t_range.as_ref().expect("validated");
            let n = range.count;
            (0..n)
                .map(|k| {
                    if n == 1 {
                        range.start
                    } else {
                        let f = k as f64 / (n - 1) as f64;
                        match range.spacing.as_str() {
                            "log" => {
                                (range.start.ln() + f * (range.stop.ln() - range.start.ln())).exp()
                            }
                            _ => range.start + f * (range.stop - range.start),
                        }
                    }
                })
                .collect()
        };
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values
    }

    /// Build the fleet's cost models and report how many generated max costs
    /// were clipped at the floor.
    pub fn build_costs(&self) -> Result<(Vec<EffortCostModel>, u64), ConfigError> {
        if let Some(pop) = &self.population {
            let generated = generate_population(
                self.problem.agents,
                pop.eta_max,
                pop.cost_floor,
                self.run.seed,
            );
            Ok((generated.models, generated.clipped))
        } else {
            let models: Result<Vec<_>, _> = self.agents.iter().map(|a| a.build()).collect();
            Ok((models?, 0))
        }
    }

    pub fn honest_agent(&self) -> Option<HonestAgent> {
        self.run
            .honest_precision
            .map(|precision| HonestAgent { precision })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            realizability_grid: self.solver.realizability_grid,
            binary_scale: self.solver.binary_scale,
            max_cells: self.solver.max_cells,
            bkp_target_cells: self.solver.bkp_target_cells,
            bkp_sub_units: self.solver.bkp_sub_units,
            descent_starts: self.solver.descent_starts,
            descent_iters: self.solver.descent_iters,
            descent_seed: self.run.seed,
        }
    }

    pub fn deviation_options(&self, seed: u64) -> DeviationOptions {
        DeviationOptions {
            effort_points: self.solver.deviation_points,
            trials: self.run.trials,
            z_threshold: self.solver.z_threshold,
            seed,
        }
    }
}
