//! Experiment configuration, population generation, sweeps, and persistence.

pub mod config;
pub mod population;
pub mod record;
pub mod sweep;

pub use config::{AgentSpec, ConfigError, ExperimentConfig};
pub use population::{generate_population, GeneratedPopulation};
pub use record::{RuleDump, RunRecord, SweepRow};
pub use sweep::{csv_string, format_sig9, sweep, write_csv, ExperimentError};
