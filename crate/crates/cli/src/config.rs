//! Experiment configuration: one JSON document per run.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use spiked_core::amp::AmpConfig;
use spiked_core::{ChannelSpec, PriorSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FisherInfo,
    SeCurve,
    MmseCurve,
    MseSweep,
    EigengapSweep,
    AmpRun,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::FisherInfo => "fisher-info",
            Experiment::SeCurve => "se-curve",
            Experiment::MmseCurve => "mmse-curve",
            Experiment::MseSweep => "mse-sweep",
            Experiment::EigengapSweep => "eigengap-sweep",
            Experiment::AmpRun => "amp-run",
        }
    }

    fn simulates(self) -> bool {
        matches!(self, Experiment::MseSweep | Experiment::EigengapSweep | Experiment::AmpRun)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Estimators {
    pub pca_raw: bool,
    pub pca_fisher: bool,
    pub denoised_pca: bool,
    pub amp: bool,
    pub linearized_amp: bool,
}

impl Default for Estimators {
    fn default() -> Self {
        Self { pca_raw: true, pca_fisher: true, denoised_pca: true, amp: true, linearized_amp: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpSettings {
    pub max_iter: usize,
    pub stop_tol: f64,
    /// Drop the memory term; a diagnostic, never the default.
    pub onsager: bool,
    pub linearized_iterations: usize,
}

impl Default for AmpSettings {
    fn default() -> Self {
        let d = AmpConfig::default();
        Self { max_iter: d.max_iter, stop_tol: d.stop_tol, onsager: d.onsager, linearized_iterations: 100 }
    }
}

impl AmpSettings {
    pub fn to_amp_config(self) -> AmpConfig {
        AmpConfig { max_iter: self.max_iter, stop_tol: self.stop_tol, onsager: self.onsager, ..AmpConfig::default() }
    }
}

fn default_n() -> usize {
    1000
}

fn default_k_max() -> usize {
    6
}

fn default_se_iterations() -> usize {
    50
}

fn default_grid_points() -> usize {
    spiked_core::asymptotics::DEFAULT_GRID_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub channel: ChannelSpec,
    pub prior: PriorSpec,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub gamma0_grid: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub estimators: Estimators,
    #[serde(default)]
    pub amp: AmpSettings,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Monte-Carlo size for Fisher coefficients; 0 uses closed forms.
    #[serde(default)]
    pub n_mc: usize,
    #[serde(default = "default_se_iterations")]
    pub se_iterations: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Add zero-signal reference rows to an eigengap sweep.
    #[serde(default)]
    pub null_reference: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self, experiment: Experiment) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Some(named) = self.experiment {
            if named != experiment {
                return invalid(format!("config is for `{named}` but `{experiment}` was requested"));
            }
        }
        let built = match self.gamma0_grid.first() {
            Some(&g) => self.channel.with_gamma0(g).build(),
            None => self.channel.build(),
        };
        built.map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.prior.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n < 50 {
            return invalid(format!("n must be at least 50, got {}", self.n));
        }
        if self.k_max == 0 {
            return invalid("k_max must be positive".into());
        }
        if self.n_mc != 0 && self.n_mc < spiked_core::channels::MIN_MONTE_CARLO {
            return invalid(format!(
                "n_mc must be 0 or at least {}, got {}",
                spiked_core::channels::MIN_MONTE_CARLO,
                self.n_mc
            ));
        }
        if self.grid_points < 101 {
            return invalid(format!("grid_points must be at least 101, got {}", self.grid_points));
        }
        if self.workers == Some(0) {
            return invalid("workers must be positive".into());
        }
        if experiment != Experiment::FisherInfo {
            if self.gamma0_grid.is_empty() {
                return invalid("gamma0_grid must be nonempty".into());
            }
            if let Some(g) = self.gamma0_grid.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return invalid(format!("gamma0 values must be positive, got {g}"));
            }
        }
        if experiment.simulates() {
            if self.seeds.is_empty() {
                return invalid("seeds must be nonempty".into());
            }
            let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
            if distinct.len() != self.seeds.len() {
                return invalid("seeds must be distinct".into());
            }
            if self.amp.stop_tol.is_nan() || self.amp.stop_tol < 0.0 {
                return invalid("amp.stop_tol must be nonnegative".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change the output (`workers`, `output`).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = None;
        canonical.output = None;
        let json = serde_json::to_string(&canonical).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
