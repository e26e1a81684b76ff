//! JSON run configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use dynqr::backtest::BacktestPlan;
use dynqr::dgp::{DesignKind, DgpConfig, ProcessKind};
use dynqr::fitter::{FitSettings, InitStrategy};
use dynqr::QuantileGrid;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out_dir: PathBuf,
    pub emit_plots: bool,
    pub simulate: Option<SimulateConfig>,
    pub fit: Option<FitConfig>,
    pub montecarlo: Option<MonteCarloConfig>,
    pub backtest: Option<BacktestConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            emit_plots: false,
            simulate: None,
            fit: None,
            montecarlo: None,
            backtest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// `seed` inside is ignored; the master seed drives the replications.
    pub dgp: DgpConfig,
    pub replications: usize,
    /// Levels at which the truth file reports coefficients.
    pub grid: QuantileGrid,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            replications: 1,
            grid: QuantileGrid::deciles(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// CSV input; `--data` overrides it.
    pub data: Option<PathBuf>,
    pub settings: FitSettings,
    /// Levels drawn in the fan chart (nearest grid level is used).
    pub plot_levels: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: None,
            settings: FitSettings::default(),
            plot_levels: vec![0.05, 0.5, 0.95],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub processes: Vec<ProcessKind>,
    pub designs: Vec<DesignKind>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    /// Penalty weights of the penalised estimator; reported in ascending order.
    pub lambdas: Vec<f64>,
    pub init_strategies: Vec<InitStrategy>,
    /// Also run the unpenalised Nelder-Mead baseline.
    pub nelder_mead_baseline: bool,
    /// Levels for the bias table.
    pub bias_levels: Vec<f64>,
    /// Coefficient values and spreads; design, process, size and seed are
    /// set per cell.
    pub dgp: DgpConfig,
    /// Fit template; `spec` and `lambda` are set per cell and estimator.
    pub fit: FitSettings,
    /// Lagged-quantile terms in the estimated model; `None` matches the
    /// simulated process.
    pub estimated_lags: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            processes: vec![ProcessKind::Qar1, ProcessKind::Dqar11],
            designs: vec![DesignKind::Y1, DesignKind::Y2, DesignKind::Y3],
            sample_sizes: vec![50, 200],
            replications: 50,
            lambdas: vec![0.0, 1.0, 5.0],
            init_strategies: vec![InitStrategy::Zeros, InitStrategy::QrWarmStart],
            nelder_mead_baseline: true,
            bias_levels: vec![0.1, 0.5, 0.9],
            dgp: DgpConfig::default(),
            fit: FitSettings::default(),
            estimated_lags: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub data: Option<PathBuf>,
    pub plan: BacktestPlan,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            data: None,
            plan: BacktestPlan::default(),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let empty = |name: &str| CliError::Config(format!("montecarlo.{name} must not be empty"));
        if self.processes.is_empty() {
            return Err(empty("processes"));
        }
        if self.designs.is_empty() {
            return Err(empty("designs"));
        }
        if self.sample_sizes.is_empty() {
            return Err(empty("sample_sizes"));
        }
        if self.init_strategies.is_empty() {
            return Err(empty("init_strategies"));
        }
        if self.lambdas.is_empty() && !self.nelder_mead_baseline {
            return Err(CliError::Config(
                "montecarlo needs at least one estimator".into(),
            ));
        }
        if self.replications == 0 {
            return Err(CliError::Config("montecarlo.replications must be positive".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CliError::Config("lambdas must be finite and non-negative".into()));
        }
        if self.estimated_lags.is_some_and(|l| l > 1) {
            return Err(CliError::Config("estimated_lags must be 0 or 1".into()));
        }
        if self
            .init_strategies
            .iter()
            .any(|s| matches!(s, InitStrategy::Explicit(_)))
        {
            return Err(CliError::Config(
                "explicit starting values are not available in montecarlo".into(),
            ));
        }
        for &tau in &self.bias_levels {
            if self.fit.grid.index_of(tau).is_none() {
                return Err(CliError::Config(format!(
                    "bias level {tau} is not on the estimation grid"
                )));
            }
        }
        Ok(())
    }
}
