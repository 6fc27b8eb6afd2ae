//! Experiment runner for the spiked-matrix simulation library: JSON configs,
//! seeded parallel sweeps over `(γ₀, seed)` cells, and CSV/JSON output.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, Experiment, ExperimentConfig};
