use std::path::{Path, PathBuf};

use heatfb::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_gamma() -> f64 {
    0.5
}

fn default_t() -> f64 {
    1.0
}

fn default_t_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_safety_factor() -> f64 {
    heatfb::gram::DEFAULT_SAFETY_FACTOR
}

fn default_calibration_range() -> [usize; 2] {
    [2, 12]
}

fn default_periods() -> usize {
    10
}

fn default_output_dt() -> f64 {
    0.05
}

/// Experiment settings read from a TOML file; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "ModelConfig::canonical")]
    pub model: ModelConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(rename = "T", default = "default_t")]
    pub t: f64,
    #[serde(rename = "T_grid", default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Seeds for random initial states in `verify`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_safety_factor")]
    pub safety_factor: f64,
    /// Inclusive range of orders `M` used to calibrate `C0`.
    #[serde(default = "default_calibration_range")]
    pub calibration_range: [usize; 2],
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t));
        }
        check_grid(&self.t_grid)?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.safety_factor >= 1.0 && self.safety_factor.is_finite()) {
            return bad(format!("safety_factor must be >= 1, got {}", self.safety_factor));
        }
        let [lo, hi] = self.calibration_range;
        if lo == 0 || lo > hi {
            return bad(format!("calibration_range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        if !(self.output_dt > 0.0 && self.output_dt.is_finite()) {
            return bad(format!("output_dt must be positive, got {}", self.output_dt));
        }
        Ok(())
    }
}

pub fn check_grid(grid: &[f64]) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::Usage("T grid must not be empty".into()));
    }
    if grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("T grid values must be positive: {grid:?}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage(format!("T grid must be strictly increasing: {grid:?}")));
    }
    Ok(())
}
